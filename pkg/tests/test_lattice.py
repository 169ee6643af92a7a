import itertools
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from percolab.lattice import (
    Edge,
    LatticeError,
    LatticeSpec,
    MAX_RADIUS,
    ceil_sqrt,
    cube_size,
    cube_vertices,
    is_bond,
    neighbors,
    offsets,
    positive_offsets,
    shell_index,
    shell_indices,
    validate_radius,
)

coords = st.lists(st.integers(-50, 50), min_size=1, max_size=6)


def test_neighbors_nn_counts():
    for d in (1, 2, 3, 7):
        spec = LatticeSpec(d)
        nb = neighbors((0,) * d, spec)
        assert len(nb) == 2 * d
        assert nb == sorted(nb)
    assert neighbors((0, 0), LatticeSpec(2)) == [(-1, 0), (0, -1), (0, 1), (1, 0)]


def test_spread_range_matches_nn_at_L1():
    assert offsets(LatticeSpec(3, "spread", 1)) == offsets(LatticeSpec(3))


def test_spread_offsets_euclidean_ball():
    spec = LatticeSpec(2, "spread", 2)
    offs = offsets(spec)
    # |x|^2 <= 4 minus the origin: 13 - 1
    assert len(offs) == 12
    assert all(0 < a * a + b * b <= 4 for a, b in offs)
    assert len(positive_offsets(spec)) == 6


def test_invalid_specs():
    with pytest.raises(LatticeError):
        LatticeSpec(0)
    with pytest.raises(LatticeError):
        LatticeSpec(2, model="hex")
    with pytest.raises(LatticeError):
        LatticeSpec(2, cube_norm="l3")
    with pytest.raises(LatticeError):
        LatticeSpec(2, "spread", 0)
    with pytest.raises(LatticeError):
        neighbors((0, 0, 0), LatticeSpec(2))


def test_edge_canonical():
    e = Edge.of((1, 0), (0, 0))
    assert e == ((0, 0), (1, 0))
    assert Edge.of(*e) == e
    with pytest.raises(LatticeError):
        Edge.of((0, 0), (0, 0))


def test_shell_examples():
    assert shell_index((0, 0, 0)) == 0
    assert shell_index((3, 4)) == 5
    assert shell_index((1, 1)) == 2
    assert shell_index((1, 1), "l1") == 2
    assert shell_index((1, -3), "linf") == 3


@given(st.integers(0, 10**18))
def test_ceil_sqrt(s):
    k = ceil_sqrt(s)
    assert k * k >= s and (k == 0 or (k - 1) ** 2 < s)


@given(coords)
def test_shell_is_ceiling_of_norm(v):
    for norm in ("l1", "l2", "linf"):
        k = shell_index(v, norm)
        if norm == "l2":
            n2 = sum(c * c for c in v)
            assert (k - 1) ** 2 < n2 <= k * k or (k == 0 and n2 == 0)
        else:
            val = sum(map(abs, v)) if norm == "l1" else max(map(abs, v))
            assert k == val


@given(st.lists(coords.filter(lambda v: len(v) == 3), min_size=1, max_size=30))
def test_shell_indices_vectorised(rows):
    arr = np.array(rows)
    for norm in ("l1", "l2", "linf"):
        assert list(shell_indices(arr, norm)) == [shell_index(r, norm) for r in rows]


def test_shell_indices_near_squares():
    big = 10**8
    rows = np.array([[big, 0], [big, 1], [big - 1, 0]])
    assert list(shell_indices(rows, "l2")) == [big, big + 1, big - 1]


def test_shells_partition_cube():
    spec = LatticeSpec(3)
    r = 4
    verts = cube_vertices(r, spec)
    per_shell = [sum(shell_index(v, spec) == k for v in verts) for k in range(r + 1)]
    assert sum(per_shell) == len(verts) == cube_size(r, spec)
    # shells are disjoint and Q_k grows by exactly dQ_k
    for k in range(1, r + 1):
        assert len(cube_vertices(k, spec)) - len(cube_vertices(k - 1, spec)) == per_shell[k]


@pytest.mark.parametrize("norm", ["l1", "l2", "linf"])
@pytest.mark.parametrize("d", [1, 2, 3])
def test_cube_size_matches_enumeration(norm, d):
    spec = LatticeSpec(d, cube_norm=norm)
    for r in range(0, 6):
        assert cube_size(r, spec) == len(cube_vertices(r, spec))


def test_cube_size_linf_closed_form():
    assert cube_size(3, LatticeSpec(7, cube_norm="linf")) == 7**7


@given(st.integers(1, 4), coords.filter(lambda v: len(v) <= 4))
def test_neighbors_are_bonds(d, v):
    v = tuple((v + [0] * d)[:d])
    spec = LatticeSpec(d)
    for w in neighbors(v, spec):
        assert is_bond(v, w, spec)
        assert abs(shell_index(w, spec) - shell_index(v, spec)) <= spec.max_step


def test_spread_max_step_bounds_shell_change():
    for norm in ("l1", "l2", "linf"):
        spec = LatticeSpec(3, "spread", 2, norm)
        for v in itertools.product(range(-3, 4), repeat=3):
            for w in neighbors(v, spec):
                assert abs(shell_index(w, spec) - shell_index(v, spec)) <= spec.max_step


def test_validate_radius():
    assert validate_radius(5) == 5
    for bad in (-1, 1.5, MAX_RADIUS + 1):
        with pytest.raises(LatticeError):
            validate_radius(bad)
    assert math.isclose(validate_radius(2.0), 2)
