import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from hubtrack.lattice import (
    ParameterError,
    SectorBasis,
    SystemParams,
    dimension,
    enumerate_sector,
    hop_sign_and_target,
)

from .oracles import annihilator, brute_force_sector


def test_enumerate_small_sectors():
    assert enumerate_sector(2, 1) == [0b01, 0b10]
    masks = enumerate_sector(4, 2)
    assert len(masks) == 6
    assert masks[0] == 0b0011 and masks[-1] == 0b1100


def test_enumerate_matches_brute_force():
    masks = enumerate_sector(10, 5)
    assert len(masks) == 252
    assert masks == brute_force_sector(10, 5)


@pytest.mark.parametrize("L,N", [(0, 0), (4, 5), (4, -1), (33, 1)])
def test_enumerate_rejects_bad_sector(L, N):
    with pytest.raises(ParameterError):
        enumerate_sector(L, N)


def test_dimension():
    assert dimension(2, 1, 1) == 4
    assert dimension(4, 2, 2) == 36
    assert dimension(10, 5, 5) == 63504 == 252**2


def test_hop_examples():
    assert hop_sign_and_target(0b0001, 0, +1, 4) == (0b0010, 1)
    assert hop_sign_and_target(0b0011, 0, +1, 4) is None
    assert hop_sign_and_target(0b1001, 3, +1, 4) is None
    assert hop_sign_and_target(0b1000, 3, +1, 4) == (0b0001, 1)
    # wrap bond: two particles in between give +1, one gives -1
    assert hop_sign_and_target(0b1110, 3, +1, 4) == (0b0111, 1)
    assert hop_sign_and_target(0b1100, 3, +1, 4) == (0b0101, -1)


def test_hop_sign_matches_jordan_wigner():
    L = 4
    c = [annihilator(m, L) for m in range(L)]
    for j in range(L):
        for direction in (1, -1):
            k = (j + direction) % L
            op = c[k].T @ c[j]
            for mask in range(1 << L):
                column = op[:, mask]
                got = hop_sign_and_target(mask, j, direction, L)
                if got is None:
                    assert not column.any()
                else:
                    new, sign = got
                    expected = np.zeros(1 << L)
                    expected[new] = sign
                    np.testing.assert_array_equal(column, expected)


def test_wrap_sign_is_parity_of_other_particles():
    L = 6
    for mask in enumerate_sector(L, 3):
        got = hop_sign_and_target(mask, L - 1, +1, L)
        if got is not None:
            assert got[1] == (-1) ** (3 - 1)


@given(st.integers(2, 10).flatmap(lambda L: st.tuples(st.just(L), st.integers(0, (1 << L) - 1), st.integers(0, L - 1), st.sampled_from([1, -1]))))
def test_hop_reversible_and_conserving(args):
    L, mask, j, direction = args
    got = hop_sign_and_target(mask, j, direction, L)
    if got is None:
        return
    new, sign = got
    assert bin(new).count("1") == bin(mask).count("1")
    back = hop_sign_and_target(new, (j + direction) % L, -direction, L)
    assert back is not None
    assert back[0] == mask and back[1] * sign == 1


def test_index_map_is_bijection():
    basis = SectorBasis(5, 2, 3)
    assert basis.dim == math.comb(5, 2) * math.comb(5, 3)
    n_down = len(basis.down_states)
    seen = set()
    for i, up in enumerate(basis.up_states):
        for k, down in enumerate(basis.down_states):
            idx = basis.index_of(int(up), int(down))
            assert idx == i * n_down + k
            assert basis.state(idx) == (int(up), int(down))
            seen.add(idx)
    assert seen == set(range(basis.dim))
    with pytest.raises(KeyError):
        basis.index_of(0b11111, 0b111)


def test_basis_ordering_strictly_increasing():
    basis = SectorBasis(8, 3, 4)
    assert np.all(np.diff(basis.up_states) > 0)
    assert np.all(np.diff(basis.down_states) > 0)


@pytest.mark.parametrize(
    "kwargs",
    [dict(L=1, N_up=0, N_down=0), dict(L=4, N_up=5, N_down=0), dict(L=4, N_up=1, N_down=1, t0=0.0),
     dict(L=4, N_up=1, N_down=1, U=-1.0), dict(L=4, N_up=1, N_down=1, a=0.0)],
)
def test_system_params_validation(kwargs):
    with pytest.raises(ParameterError):
        SystemParams(**kwargs)
