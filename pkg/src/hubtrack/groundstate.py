"""Field-free ground state and the tight-binding closed forms."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse.linalg as spla

from .lattice import ParameterError, SystemParams
from .operators import HubbardModel

log = logging.getLogger(__name__)

DENSE_LIMIT = 4096


class SolverError(RuntimeError):
    def __init__(self, message: str, residual: float | None = None):
        super().__init__(message)
        self.residual = residual


class ConsistencyError(RuntimeError):
    pass


@dataclass(frozen=True)
class GroundStateResult:
    energy: float
    psi: np.ndarray
    residual: float


def _fix_phase(psi: np.ndarray) -> np.ndarray:
    k = int(np.argmax(np.abs(psi)))
    return psi * (abs(psi[k]) / psi[k])


def ground_state(
    model: HubbardModel,
    tol: float = 1e-10,
    seed: int = 0,
    maxiter: int | None = None,
    dense: bool | None = None,
) -> GroundStateResult:
    """Lowest eigenpair of H(phi=0).

    Sectors with dim <= 4096 are diagonalised densely; larger ones go through
    ARPACK's restarted Lanczos from a seeded start vector, so degenerate
    ground spaces still give a reproducible vector.
    """
    p = model.params
    # H(0) is real symmetric in the occupation basis
    H0 = (-p.t0 * (model.K + model.K_dag)).real.tocsr()
    if p.U != 0.0:
        H0 = H0 + p.U * model.interaction()
    dim = model.dim
    if dense is None:
        dense = dim <= DENSE_LIMIT
    if dim == 1:
        energy, vec = float(H0.toarray()[0, 0]), np.ones(1)
    elif dense:
        w, v = np.linalg.eigh(H0.toarray())
        energy, vec = float(w[0]), v[:, 0]
    else:
        v0 = np.random.default_rng(seed).standard_normal(dim)
        try:
            w, v = spla.eigsh(H0, k=1, which="SA", v0=v0, tol=tol * 1e-2, maxiter=maxiter)
        except spla.ArpackNoConvergence as exc:
            raise SolverError(f"Lanczos did not converge: {exc}") from exc
        energy, vec = float(w[0]), v[:, 0]
    psi = _fix_phase(vec.astype(np.complex128))
    psi /= np.linalg.norm(psi)
    energy = float(np.vdot(psi, H0 @ psi).real)
    residual = float(np.linalg.norm(H0 @ psi - energy * psi))
    if residual > tol * max(1.0, abs(energy)):
        raise SolverError(f"ground state residual {residual:.3e} exceeds tolerance {tol:.1e}", residual)
    log.debug("ground state dim=%d E=%.12f residual=%.2e", dim, energy, residual)
    return GroundStateResult(energy=energy, psi=psi, residual=residual)


def tight_binding_energy(L: int, N_sigma: int, t0: float = 1.0) -> float:
    """Energy of one spin species filling the N_sigma modes nearest zero momentum."""
    if not 0 <= N_sigma <= L:
        raise ParameterError(f"N_sigma={N_sigma} outside [0, {L}]")
    if N_sigma == 0:
        return 0.0
    omega = 2.0 * np.pi * np.arange(1, L) / L
    if N_sigma % 2 == 0:
        total = 1.0 + 2.0 * np.cos(omega[: N_sigma // 2 - 1]).sum() + np.cos(np.pi * N_sigma / L)
    else:
        total = 1.0 + 2.0 * np.cos(omega[: (N_sigma - 1) // 2]).sum()
    return float(-2.0 * t0 * total)


def tight_binding_ground_energy(params: SystemParams) -> float:
    return tight_binding_energy(params.L, params.N_up, params.t0) + tight_binding_energy(
        params.L, params.N_down, params.t0
    )


def ground_bond_check(result: GroundStateResult, model: HubbardModel, atol: float = 1e-8) -> float:
    """Check Re K(psi_g) = -E_g / (2 t0) at U=0; return Im K(psi_g)."""
    p = model.params
    if p.U != 0.0:
        raise ParameterError("the bond/energy identity only holds at U=0")
    K = model.bond_expectation(result.psi).K
    expected = -result.energy / (2.0 * p.t0)
    if abs(K.real - expected) > atol:
        raise ConsistencyError(f"Re K = {K.real:.12f} but -E_g/(2 t0) = {expected:.12f}")
    return float(K.imag)
