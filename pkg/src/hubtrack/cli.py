"""Command-line experiment runner.

Every subcommand reads one YAML config, writes its data files into the
output directory, and finishes with ``manifest.json`` (config echo, code
version, seed, thread count, file checksums, wall-clock, constraint log).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from contextlib import nullcontext
from pathlib import Path

import numpy as np

from . import __version__
from .dynamics import (
    ConstraintConfig,
    ConstraintViolation,
    IntegratorError,
    TargetCurrent,
    Trajectory,
    ehrenfest_residual,
    propagate_driven,
    propagate_observable_tracking,
    propagate_tracking,
    track_autoscaled,
)
from .groundstate import SolverError, ground_state, tight_binding_ground_energy
from .io import (
    ExperimentConfig,
    read_target_series,
    read_trajectory,
    sha256_file,
    write_manifest,
    write_spectrum,
    write_table,
    write_trajectory,
)
from .lattice import ParameterError
from .operators import HubbardModel
from .spectral import filter_sweep, harmonic_spectrum, numerical_gradient

log = logging.getLogger("hubtrack")

EXIT_OK = 0
EXIT_PARAMETER = 2
EXIT_SOLVER = 3
EXIT_INTEGRATOR = 4
EXIT_CONSTRAINT = 5


class Run:
    """Output directory bookkeeping for one subcommand invocation."""

    def __init__(self, out: Path, config: ExperimentConfig, command: str, seed: int, threads: int | None):
        self.out = out
        self.config = config
        self.command = command
        self.seed = seed
        self.threads = threads
        self.files: list[str] = []
        self.violations: list[dict] = []
        self.summary: dict = {}
        self.partial = False
        out.mkdir(parents=True, exist_ok=True)

    def path(self, name: str) -> Path:
        self.files.append(name)
        return self.out / name

    def trajectory(self, name: str, traj: Trajectory) -> None:
        write_trajectory(self.path(name), traj)

    def spectrum_of(self, name: str, traj: Trajectory, source: str = "J") -> None:
        cfg = self.config
        series = getattr(traj, source)
        spec = harmonic_spectrum(numerical_gradient(series, traj.dt), traj.dt, cfg.pulse.omega0, cfg["output"]["window"])
        write_spectrum(self.path(name), spec, [f"source: d{source}/dt"])

    def json(self, name: str, payload: dict) -> None:
        self.path(name).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")

    def manifest(self, status: str, exit_code: int, wall: float) -> None:
        files = sorted(set(self.files))
        write_manifest(
            self.out / "manifest.json",
            {
                "command": self.command,
                "code_version": __version__,
                "config": self.config.data,
                "seed": self.seed,
                "threads": self.threads,
                "status": status,
                "exit_code": exit_code,
                "partial_outputs": self.partial,
                "files": {f: sha256_file(self.out / f) for f in files if (self.out / f).exists()},
                "wall_clock_seconds": round(wall, 3),
                "constraint_violations": self.violations,
                "summary": self.summary,
            },
        )


def _ground(run: Run, model: HubbardModel):
    return ground_state(model, tol=run.config["ground"]["tol"], seed=run.seed)


def _norm_tol(run: Run) -> float:
    return run.config["output"]["norm_tol"]


def _stride(run: Run) -> int:
    return run.config["output"]["snapshot_stride"]


def cmd_ground(run: Run) -> None:
    params = run.config.system
    model = HubbardModel(params)
    gs = _ground(run, model)
    bond = model.bond_expectation(gs.psi)
    result = {
        "dim": model.dim,
        "energy": gs.energy,
        "residual": gs.residual,
        "K_real": bond.K.real,
        "K_imag": bond.K.imag,
        "doublon": model.doublon_expectation(gs.psi),
    }
    if params.U == 0.0:
        analytic = tight_binding_ground_energy(params)
        result["analytic_energy"] = analytic
        result["analytic_difference"] = gs.energy - analytic
        print(f"E_g = {gs.energy:.12f}  analytic = {analytic:.12f}  diff = {gs.energy - analytic:.2e}")
    else:
        print(f"E_g = {gs.energy:.12f}  residual = {gs.residual:.2e}")
    run.json("ground.json", result)
    if run.config["ground"]["save_state"]:
        np.save(run.path("ground_state.npy"), gs.psi)
    run.summary = result


def _ehrenfest_summary(traj: Trajectory) -> dict:
    return {"ehrenfest_max_residual": ehrenfest_residual(traj), "max_norm_drift": float(np.max(np.abs(traj.norm - 1)))}


def cmd_drive(run: Run) -> None:
    cfg = run.config
    model = HubbardModel(cfg.system)
    gs = _ground(run, model)
    try:
        traj = propagate_driven(model, gs.psi, cfg.pulse, cfg.grid, _norm_tol(run), _stride(run))
    except IntegratorError as exc:
        if exc.trajectory is not None:
            run.partial = True
            run.trajectory("trajectory.partial.dat", exc.trajectory)
        raise
    run.trajectory("trajectory.dat", traj)
    run.spectrum_of("spectrum.dat", traj)
    run.summary = _ehrenfest_summary(traj)
    run.json("ehrenfest.json", run.summary)
    print(f"max |J| = {np.max(np.abs(traj.J)):.6g}  Ehrenfest residual = {run.summary['ehrenfest_max_residual']:.3e}")


def _load_target(run: Run) -> TargetCurrent:
    cfg = run.config
    spec = cfg["tracking"]["target"]
    if spec["source"] == "reference":
        ref_params = cfg.system.replace(U=spec["U"])
        ref_model = HubbardModel(ref_params)
        ref = propagate_driven(ref_model, _ground(run, ref_model).psi, cfg.pulse, cfg.grid, _norm_tol(run))
        run.trajectory("reference.dat", ref)
        run.spectrum_of("reference_spectrum.dat", ref)
        return TargetCurrent(ref.times, getattr(ref, spec["column"]))
    if "path" not in spec:
        raise ParameterError("tracking.target.path is required for file/run targets")
    t, values = read_target_series(spec["path"], spec["column"])
    target = TargetCurrent(t, values)
    if not target.covers(cfg.grid.T):
        raise ParameterError(f"target grid [{t[0]}, {t[-1]}] does not cover [0, {cfg.grid.T}]")
    return target


def _track(run: Run, model: HubbardModel, psi0: np.ndarray, target: TargetCurrent) -> Trajectory:
    cfg = run.config
    scale = cfg["tracking"]["scale"]
    kwargs = dict(norm_tol=_norm_tol(run), snapshot_stride=_stride(run))
    try:
        if scale == "auto":
            return track_autoscaled(model, psi0, target, cfg.grid, cfg.constraints, **kwargs)
        return propagate_tracking(model, psi0, target.scaled(scale), cfg.grid, cfg.constraints, **kwargs)
    except (ConstraintViolation, IntegratorError) as exc:
        if getattr(exc, "trajectory", None) is not None:
            run.partial = True
            run.trajectory("trajectory.partial.dat", exc.trajectory)
        raise


def _write_tracking(run: Run, traj: Trajectory) -> None:
    run.trajectory("trajectory.dat", traj)
    write_table(
        run.path("tracking.dat"),
        {"t": traj.times, "phi_T": traj.phi, "J_T": traj.J_target, "J": traj.J, "error": traj.J - traj.J_target},
        [f"scale: {traj.meta.get('scale', 1.0)!r}"],
    )
    run.spectrum_of("spectrum.dat", traj)
    summary = _ehrenfest_summary(traj)
    summary["max_tracking_error"] = float(np.max(np.abs(traj.J - traj.J_target)))
    summary["scale"] = traj.meta.get("scale", 1.0)
    summary["min_R"] = float(np.min(traj.R))
    summary["max_abs_X"] = float(np.max(np.abs(traj.X)))
    run.json("ehrenfest.json", summary)
    run.summary = summary


def cmd_track(run: Run) -> None:
    model = HubbardModel(run.config.system)
    target = _load_target(run)
    traj = _track(run, model, _ground(run, model).psi, target)
    _write_tracking(run, traj)
    print(
        f"tracking error = {run.summary['max_tracking_error']:.3e}  scale = {run.summary['scale']:.6g}  "
        f"Ehrenfest residual = {run.summary['ehrenfest_max_residual']:.3e}"
    )


def observable_matrix(model: HubbardModel, name: str):
    if name == "doublon":
        return model.interaction()
    if name == "bond-real":
        return (model.K + model.K_dag).tocsr()
    if name == "number":
        return model.number_operator()
    raise ParameterError(f"no matrix form for observable {name!r}")


def cmd_track_observable(run: Run) -> None:
    cfg = run.config
    name = cfg["observable"]["name"]
    if name == "current":
        # the current depends on the field explicitly, so it goes through the dedicated tracker
        cmd_track(run)
        return
    model = HubbardModel(cfg.system)
    O = observable_matrix(model, name)
    psi0 = _ground(run, model).psi
    grid = cfg.grid
    how = cfg["observable"]["target"]
    if how == "hold":
        value0 = float(np.vdot(psi0, O @ psi0).real)
        target = TargetCurrent(grid.times, np.full(grid.n_steps + 1, value0))
    elif how == "file":
        if "path" not in cfg["observable"]:
            raise ParameterError("observable.path is required for a file target")
        t, values = read_target_series(cfg["observable"]["path"], "observable")
        target = TargetCurrent(t, values)
    else:
        column = {"doublon": "doublon"}.get(name)
        if column is None:
            raise ParameterError(f"reference targets are only recorded for the doublon observable, not {name!r}")
        ref_model = HubbardModel(cfg.system.replace(U=cfg["tracking"]["target"]["U"]))
        ref = propagate_driven(ref_model, _ground(run, ref_model).psi, cfg.pulse, grid, _norm_tol(run))
        run.trajectory("reference.dat", ref)
        target = TargetCurrent(ref.times, ref.doublon)
    try:
        traj = propagate_observable_tracking(
            model, psi0, O, target, grid, cfg.constraints, _norm_tol(run), _stride(run)
        )
    except (ConstraintViolation, IntegratorError) as exc:
        if getattr(exc, "trajectory", None) is not None and len(exc.trajectory.times):
            run.partial = True
            run.trajectory("trajectory.partial.dat", exc.trajectory)
        raise
    run.trajectory("trajectory.dat", traj)
    deviation = float(np.max(np.abs(traj.observable - traj.observable_target)))
    run.summary = {"observable": name, "max_deviation": deviation, "max_abs_phi": float(np.max(np.abs(traj.phi)))}
    run.json("observable.json", run.summary)
    print(f"observable {name}: max |O - O_T| = {deviation:.3e}")


def cmd_multiplicity_demo(run: Run) -> None:
    cfg = run.config
    params = cfg.system
    if params.U != 0.0:
        raise ParameterError("multiplicity-demo is defined for U = 0")
    model = HubbardModel(params)
    psi0 = _ground(run, model).psi
    drive = propagate_driven(model, psi0, cfg.pulse, cfg.grid, _norm_tol(run))
    # tracking right through |X| = 1, where the branch folds back
    relaxed = ConstraintConfig(eps1=0.0, eps2=cfg["tracking"]["eps2"], strict=False)
    track = propagate_tracking(model, psi0, TargetCurrent(drive.times, drive.J), cfg.grid, relaxed, _norm_tol(run))
    write_table(
        run.path("fields.dat"),
        {
            "t": drive.times,
            "phi": drive.phi,
            "phi_T": track.phi,
            "J": drive.J,
            "J_T": track.J,
            "sin_phi": np.sin(drive.phi),
            "sin_phi_T": np.sin(track.phi),
        },
    )
    run.trajectory("drive.dat", drive)
    run.trajectory("trajectory.dat", track)
    run.summary = {
        "max_abs_phi": float(np.max(np.abs(drive.phi))),
        "crosses_half_pi": bool(np.max(np.abs(drive.phi)) > np.pi / 2),
        "max_current_discrepancy": float(np.max(np.abs(drive.J - track.J))),
        "max_field_discrepancy": float(np.max(np.abs(drive.phi - track.phi))),
        "max_sin_discrepancy": float(np.max(np.abs(np.sin(drive.phi) - np.sin(track.phi)))),
    }
    run.json("multiplicity.json", run.summary)
    s = run.summary
    print(
        f"max|phi| = {s['max_abs_phi']:.4f}  current diff = {s['max_current_discrepancy']:.2e}  "
        f"field diff = {s['max_field_discrepancy']:.4f}"
    )


def cmd_filter_sweep(run: Run, cutoffs: list[float] | None = None) -> None:
    cfg = run.config
    model = HubbardModel(cfg.system)
    psi0 = _ground(run, model).psi
    fcfg = cfg["filter"]
    if "tracking_path" in fcfg:
        traj = read_trajectory(fcfg["tracking_path"])
    else:
        traj = _track(run, model, psi0, _load_target(run))
        _write_tracking(run, traj)
    omega0 = cfg.pulse.omega0
    orders = cutoffs if cutoffs is not None else fcfg["cutoffs"]
    entries = filter_sweep(
        model, psi0, traj, [o * omega0 for o in orders], omega0, cfg["output"]["window"],
        mismatch_order=fcfg.get("mismatch_order"), norm_tol=_norm_tol(run),
    )
    rows = {"cutoff_order": [], "mismatch": [], "ok": []}
    for order, entry in zip(orders, entries):
        rows["cutoff_order"].append(order)
        rows["mismatch"].append(entry.mismatch)
        rows["ok"].append(0.0 if entry.error else 1.0)
        if entry.spectrum is not None:
            write_spectrum(run.path(f"spectrum_wc{order:g}.dat"), entry.spectrum, [f"cutoff_order: {order:g}"])
        else:
            run.violations.append({"cutoff_order": order, "error": entry.error})
            run.partial = True
    write_table(run.path("sweep.dat"), {k: np.array(v) for k, v in rows.items()})
    run.summary.update({"cutoffs": list(orders), "mismatch": rows["mismatch"]})
    for order, m in zip(orders, rows["mismatch"]):
        print(f"omega_c = {order:g} omega0  mismatch = {m:.4g}")


COMMANDS = {
    "ground": cmd_ground,
    "drive": cmd_drive,
    "track": cmd_track,
    "track-observable": cmd_track_observable,
    "multiplicity-demo": cmd_multiplicity_demo,
    "filter-sweep": cmd_filter_sweep,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hubtrack", description="Tracking control of the driven Hubbard ring")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, type=Path)
        p.add_argument("--out", type=Path, help="output directory (overrides output.directory)")
        p.add_argument("--seed", type=int, default=0, help="Lanczos start-vector seed")
        p.add_argument("--threads", type=int, default=1)
        p.add_argument("--snapshot-stride", type=int)
        p.add_argument("-v", "--verbose", action="store_true")
        if name == "track-observable":
            p.add_argument("--observable", choices=["current", "doublon", "bond-real", "number"])
        if name == "filter-sweep":
            p.add_argument("--cutoffs", type=float, nargs="+", help="cut-offs in units of omega0")
    return parser


def _thread_limit(threads: int | None):
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:
        return nullcontext()
    return threadpool_limits(limits=threads)


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        config = ExperimentConfig.load(args.config)
        if args.snapshot_stride is not None:
            config.data["output"]["snapshot_stride"] = args.snapshot_stride
        if getattr(args, "observable", None):
            config.data["observable"]["name"] = args.observable
    except (ParameterError, OSError) as exc:
        print(f"parameter error: {exc}", file=sys.stderr)
        return EXIT_PARAMETER
    out = args.out if args.out is not None else Path(config["output"]["directory"])
    run = Run(out, config, args.command, args.seed, args.threads)
    start = time.perf_counter()
    status, code = "ok", EXIT_OK
    try:
        with _thread_limit(args.threads):
            if args.command == "filter-sweep":
                cmd_filter_sweep(run, args.cutoffs)
            else:
                COMMANDS[args.command](run)
    except ParameterError as exc:
        status, code = f"parameter error: {exc}", EXIT_PARAMETER
    except SolverError as exc:
        status, code = f"solver failure: {exc}", EXIT_SOLVER
    except ConstraintViolation as exc:
        run.violations.append({"kind": exc.kind, "value": exc.value, "time": exc.time})
        status, code = f"constraint violation: {exc}", EXIT_CONSTRAINT
    except IntegratorError as exc:
        status, code = f"integrator failure: {exc}", EXIT_INTEGRATOR
    run.manifest(status, code, time.perf_counter() - start)
    if code:
        print(status, file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
