"""Independent dense reference constructions used by the tests.

Nothing here uses the package's bit tricks: fermion operators are built as
explicit Jordan-Wigner Kronecker products on the full 2^(2L) Fock space and
projected onto the sector afterwards.
"""

from __future__ import annotations

from functools import reduce

import numpy as np
import scipy.sparse as sp

_Z = np.diag([1.0, -1.0])
_I = np.eye(2)
_A = np.array([[0.0, 1.0], [0.0, 0.0]])  # |1> -> |0> on a single mode


def annihilator(mode: int, n_modes: int, sparse: bool = False):
    """c_mode on n_modes fermionic modes; mode 0 is the left-most factor.

    The basis integer has bit ``m`` equal to the occupation of mode ``m``,
    which is the factor at position ``n_modes - 1 - m`` of the Kronecker
    product, so the Jordan-Wigner string covers modes with smaller index.
    """
    factors = []
    for pos in range(n_modes):
        m = n_modes - 1 - pos
        if m == mode:
            factors.append(_A)
        elif m < mode:
            factors.append(_Z)
        else:
            factors.append(_I)
    if sparse:
        return reduce(lambda x, y: sp.kron(x, y, format="csr"), [sp.csr_matrix(f) for f in factors])
    return reduce(np.kron, factors)


def fock_index(up: int, down: int, L: int) -> int:
    return up | (down << L)


def sector_projector(basis) -> np.ndarray:
    """Sparse matrix whose columns map sector index -> full Fock index."""
    L = basis.L
    rows = [fock_index(*basis.state(i), L) for i in range(basis.dim)]
    return sp.csr_matrix((np.ones(basis.dim), (rows, np.arange(basis.dim))), shape=(1 << (2 * L), basis.dim))


def dense_operators(basis):
    """Dense (K, D) restricted to the sector, built from Jordan-Wigner operators."""
    L = basis.L
    n = 2 * L
    c = [annihilator(m, n, sparse=True) for m in range(n)]
    K = sp.csr_matrix((1 << n, 1 << n))
    for spin in range(2):
        for j in range(L):
            a, b = spin * L + j, spin * L + (j + 1) % L
            K += c[a].T @ c[b]
    D = sp.csr_matrix(K.shape)
    for j in range(L):
        D += (c[j].T @ c[j]) @ (c[L + j].T @ c[L + j])
    P = sector_projector(basis)
    return (P.T @ K @ P).toarray(), (P.T @ D @ P).toarray()


def dense_hamiltonian(K: np.ndarray, D: np.ndarray, phi: float, t0: float, U: float) -> np.ndarray:
    return -t0 * (np.exp(-1j * phi) * K + np.exp(1j * phi) * K.conj().T) + U * D


def brute_force_sector(L: int, N: int) -> list[int]:
    return [m for m in range(1 << L) if bin(m).count("1") == N]


def _expmh(H: np.ndarray, h: float) -> np.ndarray:
    """exp(-i h H) for Hermitian H through its eigendecomposition."""
    w, V = np.linalg.eigh(H)
    return (V * np.exp(-1j * h * w)) @ V.conj().T


def magnus4_propagate(K, D, psi0, field, t0, U, dt, n_steps, substeps=4):
    """Fourth-order commutator-free Magnus stepping with dense matrix exponentials."""
    h = dt / substeps
    c1, c2 = 0.5 - np.sqrt(3) / 6, 0.5 + np.sqrt(3) / 6
    a1, a2 = 0.25 + np.sqrt(3) / 6, 0.25 - np.sqrt(3) / 6
    psi = psi0.astype(complex)
    t = 0.0
    for _ in range(n_steps * substeps):
        H1 = dense_hamiltonian(K, D, field(t + c1 * h), t0, U)
        H2 = dense_hamiltonian(K, D, field(t + c2 * h), t0, U)
        # the exponential weighted towards the earlier node acts first
        psi = _expmh(a1 * H1 + a2 * H2, h) @ psi
        psi = _expmh(a2 * H1 + a1 * H2, h) @ psi
        t += h
    return psi


def dense_tracking_rk4(K, D, psi0, J_T, t0, U, a, dt, n_steps):
    """Tracking evolution with H_T assembled as a dense matrix at every stage."""

    def H_T(t, psi):
        k = psi.conj() @ K @ psi
        R, theta = abs(k), np.angle(k)
        X = J_T(t) / (2 * a * t0 * R)
        P_plus = -t0 * (np.sqrt(1 - X**2) + 1j * X)
        hop = P_plus * np.exp(-1j * theta) * K
        return hop + hop.conj().T + U * D

    psi = psi0.astype(complex)
    t = 0.0
    for _ in range(n_steps):
        f = lambda s, y: -1j * (H_T(s, y) @ y)  # noqa: E731
        k1 = f(t, psi)
        k2 = f(t + dt / 2, psi + dt / 2 * k1)
        k3 = f(t + dt / 2, psi + dt / 2 * k2)
        k4 = f(t + dt, psi + dt * k3)
        psi = psi + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        t += dt
    return psi
