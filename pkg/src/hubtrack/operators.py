"""Sparse operators on a fixed (N_up, N_down) sector of the Hubbard ring."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .lattice import ParameterError, SectorBasis, SystemParams, popcount


@dataclass(frozen=True)
class BondExpectation:
    """Polar form of the nearest-neighbour expectation ``K = R exp(i theta)``."""

    K: complex
    R: float
    theta: float

    @classmethod
    def from_complex(cls, K: complex) -> "BondExpectation":
        K = complex(K)
        return cls(K=K, R=abs(K), theta=float(np.angle(K)))


def _between_mask(i: int, k: int) -> int:
    lo, hi = min(i, k), max(i, k)
    return ((1 << hi) - 1) & ~((1 << (lo + 1)) - 1)


def sector_bond_matrix(masks: np.ndarray, L: int) -> sp.csr_matrix:
    """Sum over j of c^dagger_j c_{j+1} for one spin species, periodic."""
    masks = np.asarray(masks, dtype=np.int64)
    n = len(masks)
    rows, cols, vals = [], [], []
    for j in range(L):
        src = (j + 1) % L
        movable = (((masks >> src) & 1) == 1) & (((masks >> j) & 1) == 0)
        old = np.nonzero(movable)[0]
        if old.size == 0:
            continue
        moved = masks[movable] ^ (1 << src) ^ (1 << j)
        crossed = popcount(masks[movable] & _between_mask(j, src))
        rows.append(np.searchsorted(masks, moved))
        cols.append(old)
        vals.append(1.0 - 2.0 * (crossed % 2))
    if not rows:
        return sp.csr_matrix((n, n), dtype=np.float64)
    return sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
    )


def build_bond_operator(basis: SectorBasis) -> sp.csr_matrix:
    """K = sum_{j,sigma} c^dagger_{j sigma} c_{j+1 sigma} on the combined space."""
    k_up = sector_bond_matrix(basis.up_states, basis.L)
    k_down = sector_bond_matrix(basis.down_states, basis.L)
    eye_up = sp.identity(len(basis.up_states), format="csr")
    eye_down = sp.identity(len(basis.down_states), format="csr")
    K = sp.kron(k_up, eye_down, format="csr") + sp.kron(eye_up, k_down, format="csr")
    K = K.astype(np.complex128).tocsr()
    K.eliminate_zeros()
    K.sort_indices()
    return K


def build_interaction(basis: SectorBasis) -> sp.dia_matrix:
    """Diagonal operator counting doubly occupied sites."""
    return sp.diags(doublon_counts(basis).astype(np.float64), format="csr")


def doublon_counts(basis: SectorBasis) -> np.ndarray:
    up, down = basis.combined_masks()
    return popcount(up & down)


class HubbardModel:
    """Operators of the driven ring, assembled once and applied per call.

    ``H(phi) = -t0 (exp(-i phi) K + exp(i phi) K^dagger) + U D``.
    """

    def __init__(self, params: SystemParams, basis: SectorBasis | None = None):
        self.params = params
        self.basis = basis if basis is not None else SectorBasis.from_params(params)
        if (self.basis.L, self.basis.N_up, self.basis.N_down) != (params.L, params.N_up, params.N_down):
            raise ParameterError("basis does not match system parameters")
        self.K = build_bond_operator(self.basis)
        self.K_dag = self.K.conj().T.tocsr()
        self.K_dag.sort_indices()
        self.doublons = doublon_counts(self.basis).astype(np.float64)
        # [D, K] has the sparsity of K with entries scaled by d_row - d_col
        comm = self.K.tocoo()
        scaled = comm.data * (self.doublons[comm.row] - self.doublons[comm.col])
        self.DK_commutator = sp.csr_matrix((scaled, (comm.row, comm.col)), shape=self.K.shape)
        self.DK_commutator.eliminate_zeros()

    @property
    def dim(self) -> int:
        return self.basis.dim

    def with_params(self, params: SystemParams) -> "HubbardModel":
        """Same sector, different couplings; reuses the assembled matrices."""
        if (params.L, params.N_up, params.N_down) != (self.params.L, self.params.N_up, self.params.N_down):
            return HubbardModel(params)
        clone = object.__new__(HubbardModel)
        clone.__dict__.update(self.__dict__)
        clone.params = params
        return clone

    def _check(self, psi: np.ndarray) -> None:
        if psi.shape != (self.dim,):
            raise ParameterError(f"state has shape {psi.shape}, expected ({self.dim},)")

    def interaction(self) -> sp.csr_matrix:
        return sp.diags(self.doublons, format="csr")

    def hamiltonian_matrix(self, phi: float) -> sp.csr_matrix:
        p = self.params
        ph = np.exp(-1j * phi)
        return (-p.t0 * (ph * self.K + np.conj(ph) * self.K_dag) + p.U * self.interaction()).tocsr()

    def current_operator(self, phi: float) -> sp.csr_matrix:
        """J(phi) = -i a t0 (exp(-i phi) K - exp(i phi) K^dagger)."""
        p = self.params
        ph = np.exp(-1j * phi)
        return (-1j * p.a * p.t0 * (ph * self.K - np.conj(ph) * self.K_dag)).tocsr()

    def apply_hamiltonian(self, psi: np.ndarray, phi: float) -> np.ndarray:
        self._check(psi)
        return self.apply_hopping(psi, -self.params.t0 * np.exp(-1j * phi))

    def apply_hopping(self, psi: np.ndarray, coeff: complex, K_psi: np.ndarray | None = None) -> np.ndarray:
        """``(coeff K + conj(coeff) K^dagger + U D) psi``."""
        if K_psi is None:
            K_psi = self.K @ psi
        out = coeff * K_psi
        out += np.conj(coeff) * (self.K_dag @ psi)
        if self.params.U != 0.0:
            out += self.params.U * (self.doublons * psi)
        return out

    def bond_expectation(self, psi: np.ndarray, K_psi: np.ndarray | None = None) -> BondExpectation:
        if K_psi is None:
            self._check(psi)
            K_psi = self.K @ psi
        return BondExpectation.from_complex(np.vdot(psi, K_psi))

    def current_expectation(self, psi: np.ndarray, phi: float) -> float:
        bond = self.bond_expectation(psi)
        p = self.params
        return -2.0 * p.a * p.t0 * bond.R * np.sin(phi - bond.theta)

    def doublon_bond_commutator(self, psi: np.ndarray) -> tuple[float, float]:
        """Polar form ``(C, kappa)`` of <[D, K]>."""
        self._check(psi)
        z = np.vdot(psi, self.DK_commutator @ psi)
        return float(abs(z)), float(np.angle(z))

    def energy(self, psi: np.ndarray, phi: float) -> float:
        return float(np.vdot(psi, self.apply_hamiltonian(psi, phi)).real)

    def doublon_expectation(self, psi: np.ndarray) -> float:
        return float(np.vdot(psi, self.doublons * psi).real)

    def number_operator(self) -> sp.csr_matrix:
        return sp.identity(self.dim, dtype=np.float64, format="csr") * (self.params.N_up + self.params.N_down)
