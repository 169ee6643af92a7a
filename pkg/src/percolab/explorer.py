"""Cluster exploration and the observables built on it.

:func:`explore` runs a breadth-first search of the open cluster of a vertex,
confined to the cube ``Q_R`` and resolving bond states lazily.  Two backends
produce identical :class:`ClusterView` objects: the compiled kernel in
``percolab._core`` (random configurations only) and a pure-Python loop that
accepts any bond-state provider.  Set ``PERCOLAB_PURE_PYTHON=1`` to force the
fallback.
"""
from __future__ import annotations

import heapq
import math
import os
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional, Sequence

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import breadth_first_order

from .configuration import RandomEdges
from .lattice import Edge, LatticeSpec, Vertex, offsets, shell_index, validate_radius

try:
    if os.environ.get("PERCOLAB_PURE_PYTHON"):
        raise ImportError("pure Python backend forced")
    from . import _core
except ImportError:  # pragma: no cover - exercised when the extension is absent
    _core = None

BACKEND = "compiled" if _core is not None else "python"

_NORM_CODE = {"l2": 0, "l1": 1, "linf": 2}
# squares of coordinates must stay well inside int64 in the kernel
_KERNEL_MAX_RADIUS = 2**24


class ExplorationError(ValueError):
    """Observable requested from a view that cannot decide it."""


@dataclass(frozen=True)
class ExploreLimits:
    """Caps for one exploration.

    Parameters
    ----------
    R : int
        Extrinsic radius: paths are confined to ``Q_R``.
    intrinsic_radius : int, optional
        Do not expand vertices at graph distance ``intrinsic_radius``.
    vertex_budget : int, optional
        Stop adding vertices once this many are visited.
    stop_on_arm : bool
        Stop as soon as a vertex of ``dQ_R`` is reached (arm events only).
    """

    R: int
    intrinsic_radius: Optional[int] = None
    vertex_budget: Optional[int] = None
    stop_on_arm: bool = False

    def __post_init__(self):
        validate_radius(self.R, "R")
        if self.R < 1:
            raise ExplorationError(f"extrinsic radius must be >= 1, got {self.R}")
        if self.intrinsic_radius is not None and (int(self.intrinsic_radius) != self.intrinsic_radius
                                                  or self.intrinsic_radius < 1):
            raise ExplorationError(f"intrinsic cap must be a positive integer, got {self.intrinsic_radius}")
        if self.vertex_budget is not None and (int(self.vertex_budget) != self.vertex_budget
                                               or self.vertex_budget < 1):
            raise ExplorationError(f"vertex budget must be a positive integer, got {self.vertex_budget}")


@dataclass(eq=False)
class ClusterView:
    """The explored open cluster of ``origin`` inside ``Q_R``.

    Vertices are stored in BFS order as rows of ``coords``; ``dist`` holds the
    exact graph distance in the ``Q_R``-restricted open subgraph and
    ``shells`` the shell index of each vertex.  ``edges`` lists every open bond
    between visited vertices as a pair of row indices.
    """

    origin: Vertex
    spec: LatticeSpec
    limits: ExploreLimits
    coords: np.ndarray
    dist: np.ndarray
    shells: np.ndarray
    edges: np.ndarray
    hit_extrinsic_boundary: bool = False
    hit_intrinsic_cap: bool = False
    hit_budget: bool = False
    stopped_on_arm: bool = False
    max_shell: int = 0
    _index: dict = field(default=None, repr=False)

    @property
    def R(self) -> int:
        return self.limits.R

    @property
    def size(self) -> int:
        return int(self.coords.shape[0])

    @property
    def arm_hit(self) -> bool:
        """The event that the origin reaches ``dQ_R``."""
        return self.max_shell >= self.limits.R

    @property
    def complete(self) -> bool:
        """True when no cap other than ``Q_R`` cut the exploration short."""
        return not (self.hit_intrinsic_cap or self.hit_budget or self.stopped_on_arm)

    @property
    def vertices(self) -> list[Vertex]:
        return [tuple(int(c) for c in row) for row in self.coords]

    @property
    def index(self) -> dict:
        if self._index is None:
            self._index = {v: i for i, v in enumerate(self.vertices)}
        return self._index

    def __contains__(self, v) -> bool:
        return tuple(v) in self.index

    def dist_of(self, v: Sequence[int]) -> Optional[int]:
        i = self.index.get(tuple(v))
        return None if i is None else int(self.dist[i])

    @property
    def dist_map(self) -> dict:
        return {v: int(d) for v, d in zip(self.vertices, self.dist)}

    @cached_property
    def open_edges_used(self) -> frozenset:
        vs = self.vertices
        return frozenset(Edge.of(vs[i], vs[j]) for i, j in self.edges)

    def adjacency(self, mask: Optional[np.ndarray] = None):
        """Symmetric CSR adjacency of the open subgraph (optionally induced on ``mask``)."""
        n = self.size
        e = self.edges
        if mask is not None and len(e):
            e = e[mask[e[:, 0]] & mask[e[:, 1]]]
        data = np.ones(2 * len(e), dtype=np.int8)
        rows = np.concatenate([e[:, 0], e[:, 1]]) if len(e) else np.zeros(0, dtype=np.int64)
        cols = np.concatenate([e[:, 1], e[:, 0]]) if len(e) else np.zeros(0, dtype=np.int64)
        return coo_matrix((data, (rows, cols)), shape=(n, n)).tocsr()


def _kernel_ok(provider, spec: LatticeSpec, limits: ExploreLimits) -> bool:
    return (
        _core is not None
        and isinstance(provider, RandomEdges)
        and provider.support is None
        and spec.d <= 64
        and limits.R + spec.max_step <= _KERNEL_MAX_RADIUS
    )


def explore(origin: Sequence[int], provider, spec: LatticeSpec, limits: ExploreLimits,
            backend: Optional[str] = None) -> ClusterView:
    """Breadth-first exploration of the open cluster of ``origin`` confined to ``Q_R``.

    Parameters
    ----------
    origin : sequence of int
        Start vertex (normally the lattice origin).
    provider : RandomEdges or ExplicitEdges
        Source of bond states.
    spec : LatticeSpec
        Lattice geometry.
    limits : ExploreLimits
        Extrinsic radius and optional caps.
    backend : {"compiled", "python"}, optional
        Force a backend; by default the compiled kernel is used whenever it
        can handle the provider.

    Returns
    -------
    ClusterView
        Budget exhaustion is not an error; it sets ``hit_budget``.
    """
    origin = tuple(int(c) for c in origin)
    if len(origin) != spec.d:
        raise ExplorationError(f"origin {origin} does not match dimension {spec.d}")
    if backend is None:
        backend = "compiled" if _kernel_ok(provider, spec, limits) else "python"
    if backend == "compiled":
        if not _kernel_ok(provider, spec, limits):
            raise ExplorationError("compiled backend unavailable for this provider/spec")
        return _explore_compiled(origin, provider, spec, limits)
    if backend != "python":
        raise ExplorationError(f"unknown backend {backend!r}")
    return _explore_python(origin, provider, spec, limits)


_geometry_cache: dict = {}


def _kernel_offsets(spec: LatticeSpec) -> np.ndarray:
    key = (spec.d, spec.model, spec.L)
    arr = _geometry_cache.get(key)
    if arr is None:
        arr = np.ascontiguousarray(np.array(offsets(spec), dtype=np.int64).reshape(-1, spec.d))
        _geometry_cache[key] = arr
    return arr


def _explore_compiled(origin, provider: RandomEdges, spec, limits) -> ClusterView:
    cap = -1 if limits.intrinsic_radius is None else int(limits.intrinsic_radius)
    budget = -1 if limits.vertex_budget is None else int(limits.vertex_budget)
    coords, dist, shells, edges, flags, max_shell = _core.explore_random(
        np.array(origin, dtype=np.int64), _kernel_offsets(spec), _NORM_CODE[spec.cube_norm],
        int(limits.R), cap, budget, bool(limits.stop_on_arm), provider.word, provider.p,
    )
    return ClusterView(origin, spec, limits, coords, dist, shells, edges,
                       *(bool(f) for f in flags), max_shell=int(max_shell))


def _explore_python(origin, provider, spec, limits) -> ClusterView:
    offs = offsets(spec)
    norm = spec.cube_norm
    R = limits.R
    cap = limits.intrinsic_radius
    budget = limits.vertex_budget
    is_open = provider.is_open
    # bonds outside a finite support are closed and cannot change the result
    adjacency = getattr(provider, "candidate_adjacency", None)

    coords = [origin]
    dist = [0]
    shells = [shell_index(origin, norm)]
    index = {origin: 0}
    edges = []
    hit_ext = hit_cap = hit_budget = stopped = False
    max_shell = shells[0]
    if limits.stop_on_arm and max_shell >= R:
        stopped = True

    head = 0
    while head < len(coords) and not stopped:
        u = coords[head]
        du = dist[head]
        if adjacency is None:
            nbrs = [tuple(a + b for a, b in zip(u, o)) for o in offs]
        else:
            nbrs = adjacency.get(u, ())
        for v in nbrs:
            pos = v > u
            idx = index.get(v)
            if idx is not None:
                if idx > head and (is_open(u, v) if pos else is_open(v, u)):
                    edges.append((head, idx))
                continue
            sv = shell_index(v, norm)
            if sv > R:
                if not hit_ext and (is_open(u, v) if pos else is_open(v, u)):
                    hit_ext = True
                continue
            if cap is not None and du >= cap:
                if not hit_cap and (is_open(u, v) if pos else is_open(v, u)):
                    hit_cap = True
                continue
            if is_open(u, v) if pos else is_open(v, u):
                if budget is not None and len(coords) >= budget:
                    hit_budget = True
                    continue
                index[v] = len(coords)
                coords.append(v)
                dist.append(du + 1)
                shells.append(sv)
                edges.append((head, len(coords) - 1))
                max_shell = max(max_shell, sv)
                if limits.stop_on_arm and sv >= R:
                    stopped = True
                    break
        head += 1

    view = ClusterView(
        origin, spec, limits,
        np.array(coords, dtype=np.int64).reshape(-1, spec.d),
        np.array(dist, dtype=np.int64),
        np.array(shells, dtype=np.int64),
        np.array(edges, dtype=np.int64).reshape(-1, 2),
        hit_ext, hit_cap, hit_budget, stopped, max_shell=max_shell,
    )
    view._index = index
    return view


@dataclass(frozen=True)
class ArmResult:
    """Outcome of an arm search: farthest shell reached (capped at ``R``)."""

    max_shell: int
    visited: int
    hit_budget: bool

    def reached(self, r: int) -> bool:
        return self.max_shell >= r


def arm_depth(origin: Sequence[int], provider, spec: LatticeSpec, R: int,
              budget: Optional[int] = None, backend: Optional[str] = None) -> ArmResult:
    """Decide the arm events ``{origin <-> dQ_r}`` for all ``r <= R`` at once.

    The cluster is searched farthest-shell-first and the search stops on the
    first vertex of ``dQ_R``, which keeps supercritical configurations cheap.
    Reaching a shell is independent of search order, so ``max_shell`` agrees
    with a full breadth-first exploration (capped at ``R``).  When the budget
    runs out first, ``hit_budget`` is set and ``max_shell`` is a lower bound.
    """
    origin = tuple(int(c) for c in origin)
    limits = ExploreLimits(R, vertex_budget=budget)
    if backend is None:
        backend = "compiled" if _kernel_ok(provider, spec, limits) else "python"
    if backend == "compiled":
        if not _kernel_ok(provider, spec, limits):
            raise ExplorationError("compiled backend unavailable for this provider/spec")
        ms, n, hb = _core.arm_depth(
            np.array(origin, dtype=np.int64), _kernel_offsets(spec), _NORM_CODE[spec.cube_norm],
            int(R), -1 if budget is None else int(budget), provider.word, provider.p,
        )
        return ArmResult(int(ms), int(n), bool(hb))
    return _arm_depth_python(origin, provider, spec, int(R), budget)


def _arm_depth_python(origin, provider, spec, R, budget) -> ArmResult:
    offs = offsets(spec)
    zero = (0,) * spec.d
    positive = [o > zero for o in offs]
    norm = spec.cube_norm
    is_open = provider.is_open
    max_shell = shell_index(origin, norm)
    seen = {origin}
    if max_shell >= R:
        return ArmResult(max_shell, 1, False)
    heap = [(-max_shell, 0, origin)]
    count = 1
    while heap:
        _, _, u = heapq.heappop(heap)
        for o, pos in zip(offs, positive):
            v = tuple(a + b for a, b in zip(u, o))
            if v in seen:
                continue
            sv = shell_index(v, norm)
            if sv > R:
                continue
            if is_open(u, v) if pos else is_open(v, u):
                if budget is not None and count >= budget:
                    return ArmResult(max_shell, count, True)
                seen.add(v)
                max_shell = max(max_shell, sv)
                if sv >= R:
                    return ArmResult(max_shell, count + 1, False)
                heapq.heappush(heap, (-sv, count, v))
                count += 1
    return ArmResult(max_shell, count, False)


@dataclass(frozen=True)
class Observables:
    """Cluster counts at radius ``r`` read off one view.

    ``shell_counts[k]`` counts visited vertices in ``dQ_k`` (summing to
    ``x_r_lower``); ``shell_counts_rr[k]`` counts ``dX_{k,r}`` (summing to
    ``x_rr``).  The ``*_exact`` flags say whether the view decides the value.
    """

    r: int
    x_r_lower: int
    x_rr: int
    b_r: int
    shell_counts: tuple
    shell_counts_rr: tuple
    arm_hit: bool
    x_r_exact: bool
    x_rr_exact: bool
    b_r_exact: bool


def _require_radius(view: ClusterView, r: int) -> None:
    if int(r) != r or r < 0:
        raise ExplorationError(f"radius must be a non-negative integer, got {r}")
    if r > view.R:
        raise ExplorationError(f"radius {r} exceeds the exploration radius {view.R}")


def restricted_component(view: ClusterView, r: int) -> np.ndarray:
    """Row indices of ``X_{r,r}``: vertices joined to the origin inside ``Q_r``."""
    _require_radius(view, r)
    if r == view.R:
        return np.arange(view.size)
    mask = view.shells <= r
    if view.size == 1 or not mask[1:].any():
        return np.zeros(1, dtype=np.int64)
    order = breadth_first_order(view.adjacency(mask), 0, directed=False, return_predecessors=False)
    return np.sort(order)


def observables(view: ClusterView, r: int) -> Observables:
    """``|X_r|`` (lower bound), ``|X_{r,r}|``, ``|B_r|``, shell counts and the arm event at ``r``."""
    _require_radius(view, r)
    r = int(r)
    in_q = view.shells <= r
    x_r_lower = int(in_q.sum())
    shell_counts = np.bincount(view.shells[in_q], minlength=r + 1)[: r + 1]
    rr = restricted_component(view, r)
    shell_counts_rr = np.bincount(view.shells[rr], minlength=r + 1)[: r + 1]
    b_r = int((view.dist <= r).sum())

    cap = view.limits.intrinsic_radius
    truncated = view.hit_budget or view.stopped_on_arm
    enough_room = view.R >= r * view.spec.max_step or not view.hit_extrinsic_boundary
    return Observables(
        r=r,
        x_r_lower=x_r_lower,
        x_rr=int(len(rr)),
        b_r=b_r,
        shell_counts=tuple(int(c) for c in shell_counts),
        shell_counts_rr=tuple(int(c) for c in shell_counts_rr),
        arm_hit=bool(view.max_shell >= r),
        x_r_exact=view.complete and not view.hit_extrinsic_boundary,
        x_rr_exact=not truncated and not view.hit_intrinsic_cap,
        b_r_exact=not truncated and (cap is None or cap >= r) and enough_room,
    )


def boundary_distance(view: ClusterView, r: int) -> float:
    """Smallest graph distance from the origin to a visited vertex of ``dQ_r`` (inf if none)."""
    _require_radius(view, r)
    on_shell = view.shells == r
    if not on_shell.any():
        return math.inf
    return int(view.dist[on_shell].min())


def short_arm_event(view: ClusterView, eps: float, r: int) -> bool:
    """Whether the origin reaches ``dQ_r`` by an open path of length at most ``eps * r**2``."""
    if not eps > 0:
        raise ExplorationError(f"eps must be positive, got {eps}")
    _require_radius(view, r)
    depth = math.floor(eps * r * r)
    if boundary_distance(view, r) <= depth:
        return True
    cap = view.limits.intrinsic_radius
    if view.hit_intrinsic_cap and cap < depth:
        raise ExplorationError(f"intrinsic cap {cap} is below the required depth {depth}")
    if view.hit_budget or view.stopped_on_arm:
        raise ExplorationError("view was truncated before the event could be decided")
    return False


def backbone_edges(view: ClusterView, R: Optional[int] = None) -> frozenset:
    """Open bonds carrying disjoint connections from the origin and to ``dQ_R``.

    A bond ``(a, b)`` qualifies when some open path inside ``Q_R`` runs from
    the origin to ``a`` and another, vertex-disjoint from it, runs from ``b``
    to ``dQ_R``.  Equivalently the bond lies on a simple path from the origin
    to the boundary, i.e. in the biconnected block that contains a virtual
    edge from the origin to a super-vertex wired to ``dQ_R``.
    """
    import networkx as nx

    R = view.R if R is None else int(R)
    _require_radius(view, R)
    boundary = np.flatnonzero(view.shells == R)
    if len(boundary) == 0 or view.size < 2:
        return frozenset()
    g = nx.Graph()
    g.add_edges_from((int(i), int(j)) for i, j in view.edges)
    sink = -1
    g.add_edges_from((int(b), sink) for b in boundary)
    g.add_edge(0, sink)
    vs = view.vertices
    for comp in nx.biconnected_component_edges(g):
        comp = list(comp)
        if any({a, b} == {0, sink} for a, b in comp):
            return frozenset(Edge.of(vs[a], vs[b]) for a, b in comp if sink not in (a, b))
    return frozenset()
