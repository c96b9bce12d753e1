"""Experiment configuration, delimited data files and run manifests."""

from __future__ import annotations

import copy
import hashlib
import io
import json
from pathlib import Path
from typing import Any

import jsonschema
import numpy as np
import yaml

from .dynamics import SERIES, ConstraintConfig, PulseSpec, TimeGrid, Trajectory
from .lattice import ParameterError, SystemParams
from .spectral import Spectrum

FLOAT_FMT = "%.17g"

_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_int = {"type": "integer"}

CONFIG_SCHEMA: dict[str, Any] = {
    "type": "object",
    "additionalProperties": False,
    "required": ["system"],
    "properties": {
        "system": {
            "type": "object",
            "additionalProperties": False,
            "required": ["L", "N_up", "N_down"],
            "properties": {
                "L": {"type": "integer", "minimum": 2, "maximum": 32},
                "N_up": {"type": "integer", "minimum": 0},
                "N_down": {"type": "integer", "minimum": 0},
                "t0": _pos,
                "U": {"type": "number", "minimum": 0},
                "a": _pos,
            },
        },
        "ground": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"tol": _pos, "save_state": {"type": "boolean"}},
        },
        "drive": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "amplitude": _num,
                "omega0": _pos,
                "cycles": {"type": "integer", "minimum": 1},
                "form": {"enum": ["sin2", "cw"]},
            },
        },
        "tracking": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "target": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "source": {"enum": ["reference", "file", "run"]},
                        "U": {"type": "number", "minimum": 0},
                        "path": {"type": "string"},
                        "column": {"type": "string"},
                    },
                },
                "scale": {"oneOf": [{"type": "number", "exclusiveMinimum": 0}, {"const": "auto"}]},
                "eps1": _pos,
                "eps2": _pos,
            },
        },
        "observable": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "name": {"enum": ["current", "doublon", "bond-real", "number"]},
                "target": {"enum": ["hold", "file", "reference"]},
                "path": {"type": "string"},
            },
        },
        "filter": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "cutoffs": {"type": "array", "items": {"type": "number", "minimum": 0}, "minItems": 1},
                "tracking_path": {"type": "string"},
                "mismatch_order": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "grid": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"dt": _pos, "steps_per_cycle": {"type": "integer", "minimum": 1}, "T": _pos},
        },
        "output": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "directory": {"type": "string"},
                "snapshot_stride": {"type": "integer", "minimum": 0},
                "window": {"enum": ["blackman", "hann", "none"]},
                "norm_tol": _pos,
            },
        },
    },
}

DEFAULTS: dict[str, Any] = {
    "system": {"t0": 1.0, "U": 0.0, "a": 1.0},
    "ground": {"tol": 1e-10, "save_state": False},
    "drive": {"amplitude": 1.0, "omega0": 0.25, "cycles": 2, "form": "sin2"},
    "tracking": {"target": {"source": "reference", "U": 0.0, "column": "J"}, "scale": 1.0, "eps1": 1e-3, "eps2": 1e-8},
    "observable": {"name": "doublon", "target": "hold"},
    "filter": {"cutoffs": [2.0, 5.0, 10.0, 20.0, 40.0]},
    "grid": {"steps_per_cycle": 2000},
    "output": {"directory": "out", "snapshot_stride": 0, "window": "blackman", "norm_tol": 1e-8},
}


def _merge(defaults: dict, given: dict) -> dict:
    out = copy.deepcopy(defaults)
    for key, value in given.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


class ExperimentConfig:
    """Validated, fully defaulted experiment configuration."""

    def __init__(self, raw: dict):
        try:
            jsonschema.validate(raw, CONFIG_SCHEMA)
        except jsonschema.ValidationError as exc:
            path = "/".join(str(p) for p in exc.absolute_path) or "<root>"
            raise ParameterError(f"config error at {path}: {exc.message}") from None
        self.data = _merge(DEFAULTS, raw)
        self.system  # validates particle counts against L

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentConfig":
        with open(path) as fh:
            raw = yaml.safe_load(fh) or {}
        if not isinstance(raw, dict):
            raise ParameterError("config must be a mapping")
        return cls(raw)

    def __getitem__(self, key: str) -> dict:
        return self.data[key]

    @property
    def system(self) -> SystemParams:
        s = self.data["system"]
        return SystemParams(L=s["L"], N_up=s["N_up"], N_down=s["N_down"], t0=s["t0"], U=s["U"], a=s["a"])

    @property
    def pulse(self) -> PulseSpec:
        d = self.data["drive"]
        return PulseSpec(amplitude=d["amplitude"], omega0=d["omega0"], cycles=d["cycles"], form=d["form"])

    @property
    def constraints(self) -> ConstraintConfig:
        t = self.data["tracking"]
        return ConstraintConfig(eps1=t["eps1"], eps2=t["eps2"])

    @property
    def grid(self) -> TimeGrid:
        g, pulse = self.data["grid"], self.pulse
        T = g.get("T", pulse.duration)
        dt = g.get("dt", 2.0 * np.pi / pulse.omega0 / g["steps_per_cycle"])
        return TimeGrid.from_duration(T, dt)

    def echo(self) -> str:
        return yaml.safe_dump(self.data, sort_keys=True)


def _format_table(columns: dict[str, np.ndarray], header: list[str]) -> str:
    names = list(columns)
    table = np.column_stack([np.asarray(columns[k], dtype=float) for k in names])
    buf = io.StringIO()
    for line in header:
        buf.write(f"# {line}\n")
    buf.write("# columns: " + " ".join(names) + "\n")
    np.savetxt(buf, table, fmt=FLOAT_FMT, delimiter=" ")
    return buf.getvalue()


def _read_table(path: str | Path) -> tuple[dict[str, np.ndarray], dict[str, str]]:
    header: dict[str, str] = {}
    names: list[str] | None = None
    with open(path) as fh:
        for line in fh:
            if not line.startswith("#"):
                break
            body = line[1:].strip()
            if body.startswith("columns:"):
                names = body.split(":", 1)[1].split()
            elif ":" in body:
                k, v = body.split(":", 1)
                header[k.strip()] = v.strip()
    if names is None:
        raise ParameterError(f"{path}: missing '# columns:' header")
    data = np.loadtxt(path, comments="#", ndmin=2)
    if data.shape[1] != len(names):
        raise ParameterError(f"{path}: {data.shape[1]} columns but header names {len(names)}")
    return {k: data[:, i].copy() for i, k in enumerate(names)}, header


UNITS = {
    "t": "time [1/t0 with hbar=1]",
    "phi": "Peierls phase [rad]",
    "J": "current [e a t0]",
    "R": "|K| [dimensionless]",
    "theta": "arg K, unwrapped [rad]",
    "C": "|<[D,K]>|",
    "kappa": "arg <[D,K]> [rad]",
    "norm": "||psi||",
    "energy": "<H(phi)> [t0]",
    "X": "J_T/(2 a t0 R), nan for driven runs",
    "doublon": "<D> [doubly occupied sites]",
}


def write_trajectory(path: str | Path, traj: Trajectory) -> None:
    columns = {"t": traj.times}
    columns.update({k: getattr(traj, k) for k in SERIES})
    for extra in ("J_target", "observable", "observable_target"):
        value = getattr(traj, extra)
        if value is not None:
            columns[extra] = value
    p = traj.meta.get("params")
    header = [f"kind: {traj.meta.get('kind', 'unknown')}"]
    if p is not None:
        header.append(f"system: L={p.L} N_up={p.N_up} N_down={p.N_down} t0={p.t0!r} U={p.U!r} a={p.a!r}")
    if "scale" in traj.meta:
        header.append(f"scale: {traj.meta['scale']!r}")
    header += [f"unit {k}: {v}" for k, v in UNITS.items()]
    Path(path).write_text(_format_table(columns, header))


def read_trajectory(path: str | Path) -> Trajectory:
    cols, header = _read_table(path)
    meta: dict[str, Any] = {"kind": header.get("kind", "unknown")}
    if "system" in header:
        fields = dict(item.split("=") for item in header["system"].split())
        meta["params"] = SystemParams(
            L=int(fields["L"]), N_up=int(fields["N_up"]), N_down=int(fields["N_down"]),
            t0=float(fields["t0"]), U=float(fields["U"]), a=float(fields["a"]),
        )
    if "scale" in header:
        meta["scale"] = float(header["scale"])
    missing = [k for k in ("t",) + SERIES if k not in cols]
    if missing:
        raise ParameterError(f"{path}: missing columns {missing}")
    return Trajectory(
        times=cols["t"],
        **{k: cols[k] for k in SERIES},
        J_target=cols.get("J_target"),
        observable=cols.get("observable"),
        observable_target=cols.get("observable_target"),
        meta=meta,
    )


def write_spectrum(path: str | Path, spectrum: Spectrum, extra_header: list[str] | None = None) -> None:
    header = [
        f"quantity: {spectrum.quantity}",
        f"window: {spectrum.window}",
        "normalisation: one-sided power, sum equals windowed-signal energy",
        "unit order: omega/omega0",
    ] + (extra_header or [])
    Path(path).write_text(_format_table({"order": spectrum.orders, "power": spectrum.power}, header))


def read_spectrum(path: str | Path) -> Spectrum:
    cols, header = _read_table(path)
    return Spectrum(orders=cols["order"], power=cols["power"], window=header.get("window", "blackman"))


def write_table(path: str | Path, columns: dict[str, np.ndarray], header: list[str] | None = None) -> None:
    Path(path).write_text(_format_table(columns, header or []))


def read_table(path: str | Path) -> dict[str, np.ndarray]:
    return _read_table(path)[0]


def read_target_series(path: str | Path, column: str = "J") -> tuple[np.ndarray, np.ndarray]:
    """(t, value) from a trajectory file or any table with a time column."""
    cols, _ = _read_table(path)
    tkey = "t" if "t" in cols else next(iter(cols))
    if column not in cols:
        # two-column files: time, value
        if len(cols) == 2:
            column = [k for k in cols if k != tkey][0]
        else:
            raise ParameterError(f"{path}: no column {column!r}")
    return cols[tkey], cols[column]


def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(path: str | Path, manifest: dict) -> None:
    Path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n")
