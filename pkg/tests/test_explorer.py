import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from percolab.configuration import ExplicitEdges, RandomEdges, derive_replica_key
from percolab.explorer import (
    ExplorationError,
    ExploreLimits,
    arm_depth,
    backbone_edges,
    boundary_distance,
    explore,
    observables,
    restricted_component,
    short_arm_event,
)
from percolab.lattice import Edge, LatticeSpec, cube_size, cube_vertices, neighbors, shell_index
from percolab.oracle import naive_backbone, naive_distances

needs_kernel = pytest.mark.skipif(
    __import__("percolab.explorer", fromlist=["_core"])._core is None, reason="compiled kernel not built")

O2 = (0, 0)


def rand(seed, p, i=0):
    return RandomEdges(derive_replica_key(seed, i), p)


def same_view(a, b):
    assert np.array_equal(a.coords, b.coords)
    assert np.array_equal(a.dist, b.dist)
    assert np.array_equal(a.shells, b.shells)
    assert np.array_equal(a.edges, b.edges)
    assert (a.hit_extrinsic_boundary, a.hit_intrinsic_cap, a.hit_budget, a.stopped_on_arm, a.max_shell) == \
        (b.hit_extrinsic_boundary, b.hit_intrinsic_cap, b.hit_budget, b.stopped_on_arm, b.max_shell)


def test_closed_everything_gives_origin():
    v = explore(O2, rand(0, 0.0), LatticeSpec(2), ExploreLimits(3))
    assert v.size == 1 and v.dist.tolist() == [0] and not v.hit_extrinsic_boundary


def test_open_everything_l1_cube():
    spec = LatticeSpec(2, cube_norm="l1")
    v = explore(O2, rand(0, 1.0), spec, ExploreLimits(3))
    assert v.size == 25 == cube_size(3, spec)
    # inside an l1 cube graph distance equals the l1 norm
    assert all(v.dist_of(x) == sum(map(abs, x)) for x in v.vertices)
    assert v.hit_extrinsic_boundary


def test_open_line_d1():
    v = explore((0,), rand(0, 1.0), LatticeSpec(1), ExploreLimits(5))
    assert v.size == 11
    assert v.dist_of((-5,)) == 5
    assert v.arm_hit


def test_single_open_edge():
    e = Edge.of(O2, (1, 0))
    v = explore(O2, ExplicitEdges.open_set([e]), LatticeSpec(2), ExploreLimits(2))
    assert v.vertices == [O2, (1, 0)]
    assert v.open_edges_used == {e}


def test_limits_validation():
    for bad in (dict(R=0), dict(R=2, intrinsic_radius=0), dict(R=2, vertex_budget=0), dict(R=-1)):
        with pytest.raises(ValueError):
            ExploreLimits(**bad)


def test_origin_dimension_mismatch():
    with pytest.raises(ExplorationError):
        explore((0,), rand(0, 0.5), LatticeSpec(2), ExploreLimits(2))


@needs_kernel
@pytest.mark.parametrize("spec", [LatticeSpec(2), LatticeSpec(3, cube_norm="l1"), LatticeSpec(2, cube_norm="linf"),
                                  LatticeSpec(2, "spread", 2), LatticeSpec(7)])
def test_backends_identical(spec):
    p = {2: 0.5, 3: 0.3, 7: 0.08}[spec.d] if spec.model == "nn" else 0.15
    for i in range(40):
        prov = rand(3, p, i)
        for lim in (ExploreLimits(6), ExploreLimits(6, intrinsic_radius=4), ExploreLimits(6, vertex_budget=30),
                    ExploreLimits(6, stop_on_arm=True)):
            same_view(explore(O2[:1] * spec.d, prov, spec, lim, backend="compiled"),
                      explore(O2[:1] * spec.d, prov, spec, lim, backend="python"))


def test_support_matches_unrestricted_on_inner_bonds():
    spec = LatticeSpec(2, cube_norm="linf")
    support = frozenset(Edge.of(v, w) for v in cube_vertices(2, spec) for w in neighbors(v, spec)
                        if shell_index(w, spec) <= 2)
    for i in range(30):
        a = explore(O2, RandomEdges(derive_replica_key(1, i), 0.5, support), spec, ExploreLimits(2))
        b = explore(O2, rand(1, 0.5, i), spec, ExploreLimits(2), backend="python")
        assert a.vertices == b.vertices and a.dist.tolist() == b.dist.tolist()


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32), st.sampled_from([1, 2, 3]), st.floats(0.2, 0.8), st.integers(1, 6))
def test_bfs_invariants(seed, d, p, R):
    spec = LatticeSpec(d)
    v = explore((0,) * d, rand(seed, p), spec, ExploreLimits(R))
    assert v.dist[0] == 0 and (v.shells <= R).all()
    assert (np.diff(v.dist) >= 0).all()  # BFS order
    de = np.abs(v.dist[v.edges[:, 0]] - v.dist[v.edges[:, 1]])
    assert (de <= 1).all()
    # every non-origin vertex has a parent one step closer
    has_parent = np.zeros(v.size, bool)
    has_parent[0] = True
    for a, b in v.edges:
        if v.dist[b] == v.dist[a] + 1:
            has_parent[b] = True
        if v.dist[a] == v.dist[b] + 1:
            has_parent[a] = True
    assert has_parent.all()
    assert v.max_shell == int(v.shells.max())
    assert arm_depth((0,) * d, rand(seed, p), spec, R).max_shell == min(v.max_shell, R)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32), st.sampled_from([2, 3]), st.floats(0.3, 0.7), st.integers(2, 5))
def test_distances_match_naive(seed, d, p, R):
    spec = LatticeSpec(d)
    prov = rand(seed, p)
    v = explore((0,) * d, prov, spec, ExploreLimits(R))
    assert v.dist_map == naive_distances((0,) * d, prov, spec, R)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32), st.floats(0.3, 0.8), st.integers(2, 5))
def test_observable_chain(seed, p, r):
    spec = LatticeSpec(2)
    prov = rand(seed, p)
    v = explore(O2, prov, spec, ExploreLimits(2 * r))
    o = observables(v, r)
    assert o.b_r <= o.x_rr <= o.x_r_lower <= cube_size(r, spec)
    assert sum(o.shell_counts) == o.x_r_lower and sum(o.shell_counts_rr) == o.x_rr
    # X_{r,r} does not depend on how far beyond r the view reaches
    assert o.x_rr == len(restricted_component(explore(O2, prov, spec, ExploreLimits(r)), r))


def test_observables_radius_checks():
    v = explore(O2, rand(0, 0.5), LatticeSpec(2), ExploreLimits(3))
    with pytest.raises(ExplorationError):
        observables(v, 4)
    with pytest.raises(ExplorationError):
        observables(v, -1)


def test_budget_and_cap_flags():
    spec = LatticeSpec(2)
    v = explore(O2, rand(0, 1.0), spec, ExploreLimits(5, vertex_budget=7))
    assert v.hit_budget and v.size == 7
    v = explore(O2, rand(0, 1.0), spec, ExploreLimits(5, intrinsic_radius=2))
    assert v.hit_intrinsic_cap and v.dist.max() == 2
    assert not observables(v, 3).b_r_exact and observables(v, 2).b_r_exact


def test_short_arm():
    spec = LatticeSpec(1)
    v = explore((0,), rand(0, 1.0), spec, ExploreLimits(4))
    assert boundary_distance(v, 4) == 4
    assert short_arm_event(v, 0.25, 4)  # floor(0.25 * 16) = 4
    assert not short_arm_event(v, 0.2, 4)
    closed = explore((0,), rand(0, 0.0), spec, ExploreLimits(4))
    assert boundary_distance(closed, 4) == float("inf")
    with pytest.raises(ExplorationError):
        short_arm_event(v, 0, 4)
    capped = explore((0,), rand(0, 1.0), spec, ExploreLimits(4, intrinsic_radius=1))
    with pytest.raises(ExplorationError):
        short_arm_event(capped, 1.0, 4)


def test_backbone_path_with_dead_end():
    spec = LatticeSpec(2, cube_norm="linf")
    path = [Edge.of((0, 0), (1, 0)), Edge.of((1, 0), (2, 0))]
    dead = Edge.of((1, 0), (1, 1))
    v = explore(O2, ExplicitEdges.open_set(path + [dead]), spec, ExploreLimits(2))
    assert backbone_edges(v) == frozenset(path)
    assert naive_backbone(v) == frozenset(path)


def test_backbone_empty_without_arm():
    v = explore(O2, ExplicitEdges.open_set([Edge.of(O2, (1, 0))]), LatticeSpec(2), ExploreLimits(3))
    assert backbone_edges(v) == frozenset()


def test_backbone_matches_naive_oracle():
    spec = LatticeSpec(2, cube_norm="linf")
    checked = nonempty = 0
    for i in range(600):
        v = explore(O2, rand(9, 0.55, i), spec, ExploreLimits(2))
        if v.size > 15:
            continue
        bb = backbone_edges(v)
        assert bb == naive_backbone(v, disjoint="vertex")
        # bond-disjoint paths may pass through cut vertices, so that set can only be larger
        assert bb <= naive_backbone(v, disjoint="edge")
        checked += 1
        nonempty += bool(bb)
    assert checked > 200 and nonempty > 50


@needs_kernel
def test_arm_depth_backends_agree():
    spec = LatticeSpec(3)
    for i in range(100):
        prov = rand(4, 0.25, i)
        assert arm_depth((0, 0, 0), prov, spec, 8, backend="compiled").max_shell == \
            arm_depth((0, 0, 0), prov, spec, 8, backend="python").max_shell


def test_arm_depth_budget_lower_bound():
    a = arm_depth(O2, rand(0, 1.0), LatticeSpec(2), 50, budget=10)
    assert a.hit_budget and a.max_shell < 50
