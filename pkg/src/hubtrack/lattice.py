"""Fixed-particle-number occupation bases for the 1D Hubbard ring.

States of one spin species are stored as L-bit integers: bit ``j`` set means
site ``j`` is occupied. The fermionic ordering is all spin-up sites 0..L-1
followed by all spin-down sites 0..L-1, so a hop never picks up a sign from
the other species.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

MAX_SITES = 32


class ParameterError(ValueError):
    """Invalid physical or numerical parameter."""


@dataclass(frozen=True)
class SystemParams:
    L: int
    N_up: int
    N_down: int
    t0: float = 1.0
    U: float = 0.0
    a: float = 1.0
    e: float = 1.0

    def __post_init__(self) -> None:
        if not 2 <= self.L <= MAX_SITES:
            raise ParameterError(f"L must lie in [2, {MAX_SITES}], got {self.L}")
        for name in ("N_up", "N_down"):
            n = getattr(self, name)
            if not 0 <= n <= self.L:
                raise ParameterError(f"{name}={n} outside [0, L={self.L}]")
        if not self.t0 > 0:
            raise ParameterError(f"t0 must be positive, got {self.t0}")
        if not self.U >= 0:
            raise ParameterError(f"U must be non-negative, got {self.U}")
        if not self.a > 0:
            raise ParameterError(f"a must be positive, got {self.a}")

    def replace(self, **changes) -> "SystemParams":
        values = {f: getattr(self, f) for f in self.__dataclass_fields__}
        values.update(changes)
        return SystemParams(**values)


def enumerate_sector(L: int, N: int) -> list[int]:
    """All L-bit masks with exactly N set bits, in increasing order."""
    if not 0 < L <= MAX_SITES or not 0 <= N <= L:
        raise ParameterError(f"invalid sector (L={L}, N={N})")
    masks = [sum(1 << j for j in occ) for occ in combinations(range(L), N)]
    masks.sort()
    return masks


def dimension(L: int, N_up: int, N_down: int) -> int:
    if not 0 < L <= MAX_SITES or not (0 <= N_up <= L and 0 <= N_down <= L):
        raise ParameterError(f"invalid sector (L={L}, N_up={N_up}, N_down={N_down})")
    dim = math.comb(L, N_up) * math.comb(L, N_down)
    if dim > np.iinfo(np.int64).max:
        raise OverflowError(f"sector dimension {dim} does not fit in int64")
    return dim


def popcount(x):
    """Bit count for an int or an integer numpy array."""
    if isinstance(x, np.ndarray):
        x = x.astype(np.uint64)
        count = np.zeros(x.shape, dtype=np.int64)
        while np.any(x):
            count += (x & np.uint64(1)).astype(np.int64)
            x = x >> np.uint64(1)
        return count
    return bin(int(x)).count("1")


def hop_sign_and_target(mask: int, j: int, direction: int, L: int) -> tuple[int, int] | None:
    """Apply c^dagger_{j+direction} c_j to ``mask`` on a ring of L sites.

    Returns ``(new_mask, sign)`` or ``None`` when the hop is blocked (source
    empty or target occupied). The sign is (-1) to the number of occupied
    sites strictly between source and target in site order, which gives the
    familiar (-1)^(N-1) on the wrap-around bond.
    """
    if not 0 <= j < L:
        raise ParameterError(f"site {j} outside [0, {L})")
    if direction not in (1, -1):
        raise ParameterError(f"direction must be +1 or -1, got {direction}")
    k = (j + direction) % L
    if not (mask >> j) & 1 or (mask >> k) & 1:
        return None
    lo, hi = min(j, k), max(j, k)
    between = ((1 << hi) - 1) & ~((1 << (lo + 1)) - 1)
    sign = -1 if popcount(mask & between) % 2 else 1
    return mask ^ (1 << j) ^ (1 << k), sign


@dataclass(frozen=True)
class SectorBasis:
    """Product basis of the (N_up, N_down) sector.

    Combined index is ``i_up * len(down_states) + i_down``.
    """

    L: int
    N_up: int
    N_down: int
    up_states: np.ndarray = field(init=False, repr=False)
    down_states: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        up = np.array(enumerate_sector(self.L, self.N_up), dtype=np.int64)
        down = np.array(enumerate_sector(self.L, self.N_down), dtype=np.int64)
        up.setflags(write=False)
        down.setflags(write=False)
        object.__setattr__(self, "up_states", up)
        object.__setattr__(self, "down_states", down)

    @classmethod
    def from_params(cls, params: SystemParams) -> "SectorBasis":
        return cls(params.L, params.N_up, params.N_down)

    @property
    def dim(self) -> int:
        return len(self.up_states) * len(self.down_states)

    def index_of(self, up_mask: int, down_mask: int) -> int:
        i = int(np.searchsorted(self.up_states, up_mask))
        k = int(np.searchsorted(self.down_states, down_mask))
        if (
            i >= len(self.up_states)
            or k >= len(self.down_states)
            or self.up_states[i] != up_mask
            or self.down_states[k] != down_mask
        ):
            raise KeyError((up_mask, down_mask))
        return i * len(self.down_states) + k

    def state(self, index: int) -> tuple[int, int]:
        i, k = divmod(int(index), len(self.down_states))
        return int(self.up_states[i]), int(self.down_states[k])

    def combined_masks(self) -> tuple[np.ndarray, np.ndarray]:
        """Up and down masks for every combined index, as two flat arrays."""
        n_down = len(self.down_states)
        return np.repeat(self.up_states, n_down), np.tile(self.down_states, len(self.up_states))
