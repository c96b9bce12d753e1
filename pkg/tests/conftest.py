from __future__ import annotations

import re
import sys

CRITERION = re.compile(r"test_acceptance\.py::test_criterion_(\d+)")


def pytest_terminal_summary(terminalreporter):
    """One PASS/FAIL line per acceptance criterion that ran."""
    outcomes = {}
    for key in ("passed", "failed", "error"):
        for report in terminalreporter.stats.get(key, []):
            match = CRITERION.search(getattr(report, "nodeid", ""))
            if match and report.when in ("setup", "call"):
                n = int(match.group(1))
                if key != "passed" or n not in outcomes:
                    outcomes[n] = "PASS" if key == "passed" else "FAIL"
    if not outcomes:
        return
    details = getattr(sys.modules.get("tests.test_acceptance"), "DETAILS", {})
    terminalreporter.section("acceptance criteria")
    for n in sorted(outcomes):
        terminalreporter.write_line(f"{outcomes[n]} criterion {n}: {details.get(n, '')}")
