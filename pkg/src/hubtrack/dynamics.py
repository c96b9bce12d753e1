"""Driven and tracking propagation of the Hubbard ring.

Both propagators use classical RK4 on a uniform grid. The tracking equation
of motion is nonlinear (the effective hopping depends on the bond
expectation of the current state), so every RK stage re-evaluates it.

A constant energy offset is removed from the generator before stepping. It
only changes the global phase, which is restored on output, but it keeps the
dominant eigencomponents near zero frequency where RK4 is most accurate.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp
from scipy.interpolate import CubicSpline

from .lattice import ParameterError
from .operators import HubbardModel
from .spectral import numerical_gradient

log = logging.getLogger(__name__)

TWO_PI = 2.0 * np.pi


class ConstraintViolation(RuntimeError):
    """The tracking problem left the regime where the control field is defined."""

    def __init__(self, kind: str, value: float, time: float | None = None, message: str = ""):
        self.kind = kind
        self.value = float(value)
        self.time = time
        where = "" if time is None else f" at t={time:.6g}"
        super().__init__(message or f"constraint on {kind} violated{where}: {kind}={value:.6g}")

    def at(self, time: float) -> "ConstraintViolation":
        return ConstraintViolation(self.kind, self.value, time)


class IntegratorError(RuntimeError):
    def __init__(self, message: str, trajectory: "Trajectory | None" = None):
        super().__init__(message)
        self.trajectory = trajectory


@dataclass(frozen=True)
class ConstraintConfig:
    """Bounds |X| < 1 - eps1 and R > eps2.

    ``strict=False`` admits |X| up to 1, clamping overshoot up to
    ``overshoot`` (integration error in R); it exists so the
    multiple-solution regime at |X| = 1 can be explored.
    """

    eps1: float = 1e-3
    eps2: float = 1e-8
    strict: bool = True
    overshoot: float = 1e-9

    def __post_init__(self):
        if self.strict and not self.eps1 > 0:
            raise ParameterError("eps1 must be positive")
        if not self.eps2 > 0:
            raise ParameterError("eps2 must be positive")

    def check_ratio(self, X: float) -> float:
        limit = 1.0 - self.eps1 if self.strict else 1.0
        if not abs(X) < limit:
            if not self.strict and abs(X) <= 1.0 + self.overshoot:
                return float(np.clip(X, -1.0, 1.0))
            raise ConstraintViolation("X", X)
        return X

    def check_magnitude(self, R: float, name: str = "R") -> None:
        if not R > self.eps2:
            raise ConstraintViolation(name, R)


@dataclass(frozen=True)
class PulseSpec:
    """Peierls phase ``amplitude * sin^2(omega0 t / (2 cycles)) * sin(omega0 t)`` on [0, T]."""

    amplitude: float
    omega0: float
    cycles: int = 2
    form: str = "sin2"

    def __post_init__(self):
        if not self.omega0 > 0:
            raise ParameterError("omega0 must be positive")
        if self.cycles < 1:
            raise ParameterError("cycles must be >= 1")
        if self.form not in ("sin2", "cw"):
            raise ParameterError(f"unknown pulse form {self.form!r}")

    @property
    def duration(self) -> float:
        return TWO_PI * self.cycles / self.omega0

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        carrier = np.sin(self.omega0 * t)
        if self.form == "cw":
            out = self.amplitude * carrier
        else:
            env = np.sin(self.omega0 * t / (2 * self.cycles)) ** 2
            out = np.where((t >= 0) & (t <= self.duration), self.amplitude * env * carrier, 0.0)
        return out if out.ndim else float(out)

    def derivative(self, t):
        t = np.asarray(t, dtype=float)
        w, n = self.omega0, self.cycles
        if self.form == "cw":
            out = self.amplitude * w * np.cos(w * t)
        else:
            s = np.sin(w * t / (2 * n))
            ds = (w / n) * s * np.cos(w * t / (2 * n))
            val = self.amplitude * (ds * np.sin(w * t) + s**2 * w * np.cos(w * t))
            out = np.where((t >= 0) & (t <= self.duration), val, 0.0)
        return out if out.ndim else float(out)


class SampledField:
    """Cubic-spline interpolant of a field given on a grid (e.g. a filtered control)."""

    def __init__(self, times, values):
        self.times = np.asarray(times, dtype=float)
        self.values = np.asarray(values, dtype=float)
        self._spline = CubicSpline(self.times, self.values)

    def __call__(self, t):
        out = self._spline(t)
        return out if np.ndim(out) else float(out)

    def derivative(self, t):
        out = self._spline(t, 1)
        return out if np.ndim(out) else float(out)


@dataclass
class TargetCurrent:
    """Target series on a uniform grid, spline-interpolated, times a scale ``k``."""

    times: np.ndarray
    values: np.ndarray
    scale: float = 1.0

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.times.shape != self.values.shape or self.times.size < 4:
            raise ParameterError("target needs matching time/value arrays with >= 4 samples")
        self._spline = CubicSpline(self.times, self.values)

    def __call__(self, t) -> float:
        return self.scale * float(self._spline(t))

    def derivative(self, t) -> float:
        return self.scale * float(self._spline(t, 1))

    def scaled(self, k: float) -> "TargetCurrent":
        return TargetCurrent(self.times, self.values, k)

    @property
    def peak(self) -> float:
        return self.scale * float(np.max(np.abs(self.values)))

    def covers(self, T: float) -> bool:
        return self.times[0] <= 1e-12 and self.times[-1] >= T - 1e-9


@dataclass(frozen=True)
class TimeGrid:
    dt: float
    n_steps: int

    def __post_init__(self):
        if not self.dt > 0 or self.n_steps < 1:
            raise ParameterError("time grid needs dt > 0 and at least one step")

    @classmethod
    def from_duration(cls, T: float, dt: float) -> "TimeGrid":
        return cls(dt=T / max(1, int(round(T / dt))), n_steps=max(1, int(round(T / dt))))

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.n_steps + 1)

    @property
    def T(self) -> float:
        return self.dt * self.n_steps

    def refined(self, factor: int = 2) -> "TimeGrid":
        return TimeGrid(self.dt / factor, self.n_steps * factor)


SERIES = ("phi", "J", "R", "theta", "C", "kappa", "norm", "energy", "X", "doublon")


@dataclass
class Trajectory:
    times: np.ndarray
    phi: np.ndarray
    J: np.ndarray
    R: np.ndarray
    theta: np.ndarray
    C: np.ndarray
    kappa: np.ndarray
    norm: np.ndarray
    energy: np.ndarray
    X: np.ndarray
    doublon: np.ndarray
    J_target: np.ndarray | None = None
    observable: np.ndarray | None = None
    observable_target: np.ndarray | None = None
    psi_final: np.ndarray | None = None
    snapshots: dict[int, np.ndarray] = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0])


class _Recorder:
    """Accumulates per-step observables and enforces the norm tolerance.

    The integrated vector ``chi`` differs from the physical state by the
    global phase ``exp(-i * phase[n])`` accumulated from the energy shifts.
    """

    def __init__(self, model: HubbardModel, grid: TimeGrid, norm_tol: float, snapshot_stride: int):
        n = grid.n_steps + 1
        self.model = model
        self.times = grid.times
        self.data = {k: np.full(n, np.nan) for k in SERIES}
        self.phase = np.zeros(n)
        self.norm_tol = norm_tol
        self.stride = snapshot_stride
        self.snapshots: dict[int, np.ndarray] = {}
        self.count = 0
        self._theta_prev: float | None = None

    def physical(self, n: int, chi: np.ndarray) -> np.ndarray:
        return np.exp(-1j * self.phase[n]) * chi

    def record(self, n: int, chi: np.ndarray, phi: float, X: float = np.nan) -> None:
        m, p = self.model, self.model.params
        K_chi = m.K @ chi
        norm2 = float(np.vdot(chi, chi).real)
        K = complex(np.vdot(chi, K_chi)) / norm2
        C, kappa = m.doublon_bond_commutator(chi)
        d = float(np.vdot(chi, m.doublons * chi).real) / norm2
        theta = float(np.angle(K))
        if self._theta_prev is not None:
            theta += TWO_PI * np.round((self._theta_prev - theta) / TWO_PI)
        self._theta_prev = theta
        row = self.data
        row["phi"][n] = phi
        row["R"][n] = abs(K)
        row["theta"][n] = theta
        row["J"][n] = -2.0 * p.a * p.t0 * abs(K) * np.sin(phi - theta)
        row["C"][n] = C / norm2
        row["kappa"][n] = kappa
        row["norm"][n] = np.sqrt(norm2)
        row["energy"][n] = -2.0 * p.t0 * (np.exp(-1j * phi) * K).real + p.U * d
        row["X"][n] = X
        row["doublon"][n] = d
        self.count = n + 1
        if self.stride and n % self.stride == 0:
            self.snapshots[n] = self.physical(n, chi)
        drift = abs(np.sqrt(norm2) - 1.0)
        if drift > self.norm_tol:
            raise IntegratorError(
                f"norm drift {drift:.3e} exceeds tolerance {self.norm_tol:.1e} at t={self.times[n]:.6g}"
            )

    def trajectory(self, **extra) -> Trajectory:
        n = self.count
        series = {k: v[:n].copy() for k, v in self.data.items()}
        return Trajectory(times=self.times[:n].copy(), **series, snapshots=self.snapshots, **extra)


def _rk4_step(f: Callable[[float, np.ndarray], np.ndarray], t: float, y: np.ndarray, dt: float) -> np.ndarray:
    k1 = f(t, y)
    k2 = f(t + 0.5 * dt, y + (0.5 * dt) * k1)
    k3 = f(t + 0.5 * dt, y + (0.5 * dt) * k2)
    k4 = f(t + dt, y + dt * k3)
    return y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _integrate(
    generator: Callable[[float, np.ndarray], np.ndarray],
    record: Callable[[int, np.ndarray], None],
    rec: _Recorder,
    chi: np.ndarray,
    grid: TimeGrid,
) -> np.ndarray:
    """RK4 loop for i d(chi)/dt = (G(t, chi) - E_n) chi, with E_n the energy at step start."""
    record(0, chi)
    dt = grid.dt
    for n in range(grid.n_steps):
        shift = rec.data["energy"][n]

        def f(t, y, shift=shift):
            out = generator(t, y)
            out -= shift * y
            return -1j * out

        chi = _rk4_step(f, grid.times[n], chi, dt)
        rec.phase[n + 1] = rec.phase[n] + shift * dt
        record(n + 1, chi)
    return chi


def _check_state(model: HubbardModel, psi0: np.ndarray) -> np.ndarray:
    psi0 = np.asarray(psi0, dtype=np.complex128)
    if psi0.shape != (model.dim,):
        raise ParameterError(f"initial state has shape {psi0.shape}, expected ({model.dim},)")
    if abs(np.linalg.norm(psi0) - 1.0) > 1e-10:
        raise ParameterError("initial state is not normalised")
    return psi0.copy()


def propagate_driven(
    model: HubbardModel,
    psi0: np.ndarray,
    pulse: Callable[[float], float],
    grid: TimeGrid,
    norm_tol: float = 1e-8,
    snapshot_stride: int = 0,
) -> Trajectory:
    """Integrate i d(psi)/dt = H(phi(t)) psi with a prescribed field."""
    chi = _check_state(model, psi0)
    rec = _Recorder(model, grid, norm_tol, snapshot_stride)
    meta = {"kind": "driven", "params": model.params}

    def record(n, y):
        rec.record(n, y, pulse(grid.times[n]))

    try:
        chi = _integrate(lambda t, y: model.apply_hamiltonian(y, pulse(t)), record, rec, chi, grid)
    except IntegratorError as exc:
        exc.trajectory = rec.trajectory(meta=meta)
        raise
    return rec.trajectory(psi_final=rec.physical(grid.n_steps, chi), meta=meta)


def tracking_ratio(J_T: float, R: float, params) -> float:
    """X = J_T / (2 a t0 R)."""
    return J_T / (2.0 * params.a * params.t0 * R)


def tracking_coefficient(X: float, theta: float, t0: float) -> complex:
    """P_+ exp(-i theta), the hopping coefficient of the tracking Hamiltonian."""
    return -t0 * (np.sqrt(1.0 - X * X) + 1j * X) * np.exp(-1j * theta)


def apply_tracking_hamiltonian(
    model: HubbardModel, psi: np.ndarray, J_T: float, constraints: ConstraintConfig = ConstraintConfig()
) -> tuple[np.ndarray, float, float]:
    """Return ``(H_T psi, X, theta)`` for the state-dependent tracking Hamiltonian."""
    K_psi = model.K @ psi
    K = complex(np.vdot(psi, K_psi))
    R, theta = abs(K), float(np.angle(K))
    constraints.check_magnitude(R)
    X = constraints.check_ratio(tracking_ratio(J_T, R, model.params))
    coeff = tracking_coefficient(X, theta, model.params.t0)
    return model.apply_hopping(psi, coeff, K_psi), X, theta


def tracking_rhs(
    model: HubbardModel, psi: np.ndarray, J_T: float, constraints: ConstraintConfig = ConstraintConfig()
) -> np.ndarray:
    """-i H_T(J_T, psi) psi."""
    return -1j * apply_tracking_hamiltonian(model, psi, J_T, constraints)[0]


@dataclass(frozen=True)
class ObservableTerms:
    """``R_O exp(i theta_O) = sum <[c^dagger_j c_{j+1}, O]>`` and the interaction term ``B``."""

    R: float
    theta: float
    B: float


def invert_field(terms: ObservableTerms, rate: float, t0: float, constraints: ConstraintConfig, prev_phi: float | None):
    """Solve ``rate = -2 t0 R sin(phi - theta) + B`` for phi, continuous with prev_phi."""
    if not terms.R > constraints.eps2:
        if prev_phi is not None and abs(terms.B - rate) <= constraints.eps2:
            # no leverage on the observable, but none is needed: keep the field
            return float(prev_phi)
        raise ConstraintViolation("R_O", terms.R)
    arg = constraints.check_ratio((terms.B - rate) / (2.0 * t0 * terms.R))
    phi = float(np.arcsin(arg) + terms.theta)
    if prev_phi is not None:
        phi += TWO_PI * np.round((prev_phi - phi) / TWO_PI)
    return phi


def current_tracking_terms(model: HubbardModel, psi: np.ndarray) -> ObservableTerms:
    """The current written in the generic inversion form: R_O = a R, theta_O = theta, B = 0."""
    bond = model.bond_expectation(psi)
    return ObservableTerms(R=model.params.a * bond.R, theta=bond.theta, B=0.0)


def reconstruct_phi(
    model: HubbardModel,
    psi: np.ndarray,
    J_T: float,
    prev_phi: float | None = None,
    constraints: ConstraintConfig = ConstraintConfig(),
) -> float:
    """Tracking field arcsin(-X) + theta on the branch continuous with ``prev_phi``."""
    bond = model.bond_expectation(psi)
    constraints.check_magnitude(bond.R)
    X = constraints.check_ratio(tracking_ratio(J_T, bond.R, model.params))
    phi = float(np.arcsin(-X) + bond.theta)
    if prev_phi is not None:
        phi += TWO_PI * np.round((prev_phi - phi) / TWO_PI)
    return phi


def propagate_tracking(
    model: HubbardModel,
    psi0: np.ndarray,
    target: TargetCurrent,
    grid: TimeGrid,
    constraints: ConstraintConfig = ConstraintConfig(),
    norm_tol: float = 1e-8,
    snapshot_stride: int = 0,
    fidelity_tol: float = 1e-8,
) -> Trajectory:
    """Integrate the field-free tracking equation and rebuild the control field.

    Raises ``ConstraintViolation`` (time-stamped, with the partial trajectory
    attached as ``.trajectory``) when |X| or R leave the admissible region.
    """
    chi = _check_state(model, psi0)
    p = model.params
    rec = _Recorder(model, grid, norm_tol, snapshot_stride)
    J_target = np.array([target(t) for t in grid.times])
    meta = {"kind": "tracking", "params": p, "scale": target.scale}
    state = {"phi": None}

    def generator(t, y):
        try:
            return apply_tracking_hamiltonian(model, y, target(t), constraints)[0]
        except ConstraintViolation as exc:
            raise exc.at(t) from None

    def record(n, y):
        t = grid.times[n]
        try:
            phi = reconstruct_phi(model, y / np.linalg.norm(y), J_target[n], state["phi"], constraints)
        except ConstraintViolation as exc:
            raise exc.at(t) from None
        state["phi"] = phi
        R = abs(np.vdot(y, model.K @ y)) / float(np.vdot(y, y).real)
        rec.record(n, y, phi, tracking_ratio(J_target[n], R, p))
        miss = abs(rec.data["J"][n] - J_target[n])
        if miss > fidelity_tol:
            raise IntegratorError(f"tracked current misses target by {miss:.3e} at t={t:.6g}")

    try:
        chi = _integrate(generator, record, rec, chi, grid)
    except (ConstraintViolation, IntegratorError) as exc:
        exc.trajectory = rec.trajectory(J_target=J_target[: rec.count], meta=meta)
        raise
    return rec.trajectory(J_target=J_target, psi_final=rec.physical(grid.n_steps, chi), meta=meta)


def auto_scale(
    model: HubbardModel, psi0: np.ndarray, target: TargetCurrent, constraints: ConstraintConfig, safety: float = 0.9,
    R_floor: float | None = None,
) -> float:
    """Largest k <= 1 with |k J_T| below safety * (1 - eps1) * 2 a t0 R.

    R is R(psi0) unless a lower bound ``R_floor`` from an earlier scan is given.
    """
    p = model.params
    R = model.bond_expectation(psi0).R if R_floor is None else R_floor
    peak = float(np.max(np.abs(target.values)))
    if peak == 0.0:
        return 1.0
    bound = safety * (1.0 - constraints.eps1) * 2.0 * p.a * p.t0 * R
    return float(min(1.0, bound / peak))


def track_autoscaled(
    model: HubbardModel,
    psi0: np.ndarray,
    target: TargetCurrent,
    grid: TimeGrid,
    constraints: ConstraintConfig = ConstraintConfig(),
    shrink: float = 0.8,
    max_attempts: int = 10,
    **kwargs,
) -> Trajectory:
    """Tracking with the target scaled by ``k`` from ``auto_scale``.

    R(psi) drifts during the evolution, so a run that still hits the |X|
    bound is retried with ``k`` set from the smallest R seen so far (and at
    least reduced by ``shrink``).
    """
    k = auto_scale(model, psi0, target, constraints)
    R_floor = model.bond_expectation(psi0).R
    for attempt in range(max_attempts):
        try:
            traj = propagate_tracking(model, psi0, target.scaled(k), grid, constraints, **kwargs)
            traj.meta["autoscale_attempts"] = attempt + 1
            return traj
        except ConstraintViolation as exc:
            if exc.kind != "X" or attempt == max_attempts - 1:
                raise
            partial = getattr(exc, "trajectory", None)
            if partial is not None and partial.R.size:
                R_floor = min(R_floor, float(np.min(partial.R)))
            k_next = min(k * shrink, auto_scale(model, psi0, target, constraints, R_floor=R_floor))
            log.info("scale k=%.4g violated |X| at t=%.4g; retrying with k=%.4g", k, exc.time, k_next)
            k = k_next
    raise AssertionError("unreachable")


def observable_tracking_terms(model: HubbardModel, psi: np.ndarray, O) -> ObservableTerms:
    """Evaluate ``sum <[c^dagger_j c_{j+1}, O]>`` in polar form and ``B = i U <[D, O]>``."""
    K_psi = model.K @ psi
    Kd_psi = model.K_dag @ psi
    O_psi = O @ psi
    # <[K, O]> = <K^dagger psi | O psi> - <O psi | K psi> for Hermitian O
    z = np.vdot(Kd_psi, O_psi) - np.vdot(O_psi, K_psi)
    D_psi = model.doublons * psi
    B = -2.0 * model.params.U * float(np.vdot(D_psi, O_psi).imag)
    return ObservableTerms(R=float(abs(z)), theta=float(np.angle(z)), B=B)


def observable_tracking_field(
    terms: ObservableTerms,
    dO_dt_target: float,
    t0: float,
    constraints: ConstraintConfig = ConstraintConfig(),
    prev_phi: float | None = None,
) -> float:
    """Field giving d<O>/dt = dO_dt_target: arcsin((B - dO/dt) / (2 t0 R_O)) + theta_O."""
    return invert_field(terms, dO_dt_target, t0, constraints, prev_phi)


def is_controllable(model: HubbardModel, O) -> bool:
    """False when O commutes with the bond operator, so the field cannot move <O>."""
    comm = (model.K @ O - O @ model.K).tocsr()
    comm.eliminate_zeros()
    return comm.nnz > 0 and float(np.max(np.abs(comm.data))) > 1e-14


def propagate_observable_tracking(
    model: HubbardModel,
    psi0: np.ndarray,
    O,
    target: TargetCurrent,
    grid: TimeGrid,
    constraints: ConstraintConfig = ConstraintConfig(),
    norm_tol: float = 1e-8,
    snapshot_stride: int = 0,
) -> Trajectory:
    """Drive the ring so that d<O>/dt follows the derivative of ``target``.

    ``O`` must not depend on the field. The field is solved for at every RK
    stage from the current state.
    """
    if not sp.issparse(O):
        O = sp.csr_matrix(O)
    if not is_controllable(model, O):
        raise ConstraintViolation("R_O", 0.0, 0.0, "observable commutes with the hopping operator; uncontrollable")
    chi = _check_state(model, psi0)
    t0 = model.params.t0
    rec = _Recorder(model, grid, norm_tol, snapshot_stride)
    values = np.full(grid.n_steps + 1, np.nan)
    targets = np.array([target(t) for t in grid.times])
    meta = {"kind": "observable-tracking", "params": model.params}
    state = {"phi": 0.0}

    def field_at(t, y):
        y = y / np.linalg.norm(y)
        terms = observable_tracking_terms(model, y, O)
        try:
            return observable_tracking_field(terms, target.derivative(t), t0, constraints, state["phi"])
        except ConstraintViolation as exc:
            raise exc.at(t) from None

    def record(n, y):
        phi = field_at(grid.times[n], y)
        state["phi"] = phi
        rec.record(n, y, phi)
        values[n] = float(np.vdot(y, O @ y).real) / float(np.vdot(y, y).real)

    try:
        chi = _integrate(lambda t, y: model.apply_hamiltonian(y, field_at(t, y)), record, rec, chi, grid)
    except (ConstraintViolation, IntegratorError) as exc:
        exc.trajectory = rec.trajectory(meta=meta)
        raise
    return rec.trajectory(
        observable=values, observable_target=targets, psi_final=rec.physical(grid.n_steps, chi), meta=meta
    )


def unwrap_phase(series) -> np.ndarray:
    """Remove 2 pi jumps so successive differences lie in (-pi, pi]."""
    return np.unwrap(np.asarray(series, dtype=float))


def ehrenfest_rhs(
    bond_R: float, theta: float, C: float, kappa: float, phi: float, dphi_dt: float, params
) -> float:
    """Analytic dJ/dt from the bond and doublon-commutator expectations.

    ``C exp(i kappa) = <[D, K]>``; with that orientation the interaction term
    enters with a plus sign.
    """
    pref = 2.0 * params.e * params.a * params.t0
    return -pref * dphi_dt * bond_R * np.cos(phi - theta) + pref * params.U * C * np.cos(phi - kappa)


def ehrenfest_series(traj: Trajectory, params=None, unwrap: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """(analytic dJ/dt, numerical gradient of J) along a trajectory."""
    params = params if params is not None else traj.meta["params"]
    phi = unwrap_phase(traj.phi) if unwrap else np.asarray(traj.phi)
    dphi = numerical_gradient(phi, traj.dt)
    analytic = ehrenfest_rhs(traj.R, traj.theta, traj.C, traj.kappa, phi, dphi, params)
    return analytic, numerical_gradient(traj.J, traj.dt)


def ehrenfest_residual(traj: Trajectory, params=None, unwrap: bool = True) -> float:
    """max_t |analytic dJ/dt - numerical gradient of J|."""
    analytic, numeric = ehrenfest_series(traj, params, unwrap)
    return float(np.max(np.abs(analytic - numeric)))
