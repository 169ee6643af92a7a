"""Exact ground truth on tiny bond sets.

Enumerates all ``2**m`` configurations of a finite instance, explores each
with an explicit bond-state provider (the same explorer the sampler uses) and
sums exactly weighted functionals.  Also hosts the brute-force references the
test suite checks the fast paths against: naive shortest paths and an
exhaustive disjoint-path backbone search.

Instance file format
--------------------
Plain text.  The first non-comment line is ``d=<int>``; every further line
holds one bond as two whitespace-separated coordinate tuples, for example::

    d=2
    (0,0) (1,0)
    (1,0) (1,1)

Blank lines and ``#`` comments are ignored; parentheses are optional.
"""
from __future__ import annotations

import itertools
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Optional, Sequence

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import dijkstra

from .configuration import ExplicitEdges
from .explorer import ClusterView, ExploreLimits, explore
from .lattice import Edge, LatticeSpec, Vertex, is_bond, neighbors, shell_index

MAX_EDGES = 25

Functional = Callable[[ClusterView], float]


class OracleError(ValueError):
    pass


@dataclass(frozen=True)
class FiniteInstance:
    """A finite bond set of ``Z^d`` with bond density ``p``; all other bonds are closed."""

    edges: tuple
    p: float
    spec: LatticeSpec
    vertices: tuple = field(default=())

    def __post_init__(self):
        edges = tuple(Edge.of(*e) for e in self.edges)
        if len(set(edges)) != len(edges):
            raise OracleError("duplicate bonds in instance")
        if len(edges) > MAX_EDGES:
            raise OracleError(f"{len(edges)} bonds exceed the enumeration cap of {MAX_EDGES}")
        if not 0.0 <= self.p <= 1.0:
            raise OracleError(f"p must lie in [0, 1], got {self.p}")
        for e in edges:
            if not is_bond(e.u, e.v, self.spec):
                raise OracleError(f"{e} is not a bond of the {self.spec.model} lattice")
        verts = {(0,) * self.spec.d}
        verts.update(tuple(int(c) for c in v) for v in self.vertices)
        for e in edges:
            verts.update(e)
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "vertices", tuple(sorted(verts)))

    @classmethod
    def build(cls, edges: Iterable, p: float, d: Optional[int] = None, **spec_kw) -> "FiniteInstance":
        edges = [Edge.of(*e) for e in edges]
        if d is None:
            d = len(edges[0].u)
        return cls(tuple(edges), float(p), LatticeSpec(d, **spec_kw))

    def at(self, p: float) -> "FiniteInstance":
        return FiniteInstance(self.edges, p, self.spec, self.vertices)

    @property
    def radius(self) -> int:
        """Smallest cube radius containing every vertex (at least 1)."""
        return max(1, max(shell_index(v, self.spec) for v in self.vertices))

    @property
    def limits(self) -> ExploreLimits:
        return ExploreLimits(self.radius)

    @property
    def support(self) -> frozenset:
        return frozenset(self.edges)


def path_instance(k: int, p: float) -> FiniteInstance:
    """Bonds ``0-1-...-k`` on Z^1."""
    return FiniteInstance.build([((i,), (i + 1,)) for i in range(k)], p, d=1)


def segment_instance(k: int, p: float) -> FiniteInstance:
    """Bonds of ``[-k, k]`` on Z^1."""
    return FiniteInstance.build([((i,), (i + 1,)) for i in range(-k, k)], p, d=1)


def unit_square(p: float) -> FiniteInstance:
    """The four bonds of the unit square with corners 0 and (1, 1)."""
    sq = [((0, 0), (1, 0)), ((0, 0), (0, 1)), ((1, 0), (1, 1)), ((0, 1), (1, 1))]
    return FiniteInstance.build(sq, p, d=2)


def cube_instance(r: int, p: float, d: int = 2, **spec_kw) -> FiniteInstance:
    """All bonds with both endpoints in ``Q_r``."""
    spec = LatticeSpec(d, **spec_kw)
    from .lattice import cube_vertices

    verts = cube_vertices(r, spec)
    inside = set(verts)
    edges = sorted({Edge.of(v, w) for v in verts for w in neighbors(v, spec) if w in inside})
    return FiniteInstance(tuple(edges), p, spec)


def configurations(inst: FiniteInstance):
    """Yield ``(weight, provider)`` for every configuration of ``inst``."""
    m = len(inst.edges)
    p, q = inst.p, 1.0 - inst.p
    for bits in itertools.product((False, True), repeat=m):
        k = sum(bits)
        weight = (p ** k) * (q ** (m - k))
        yield weight, ExplicitEdges(dict(zip(inst.edges, bits)))


def _views(inst: FiniteInstance, origin: Optional[Sequence[int]] = None):
    origin = (0,) * inst.spec.d if origin is None else tuple(origin)
    limits = inst.limits
    for weight, provider in configurations(inst):
        if weight == 0.0:
            continue
        yield weight, explore(origin, provider, inst.spec, limits, backend="python")


def enumerate_measure(inst: FiniteInstance, functional: Functional,
                      origin: Optional[Sequence[int]] = None) -> float:
    """Exact ``E_p[functional(view)]`` over all configurations of ``inst``.

    Terms are summed with :func:`math.fsum`, which is exactly rounded and so
    independent of summation order.
    """
    return math.fsum(w * float(functional(view)) for w, view in _views(inst, origin))


def exact_distribution(inst: FiniteInstance, functional: Functional,
                       origin: Optional[Sequence[int]] = None) -> dict:
    """Exact law of ``functional(view)`` as ``{value: probability}``."""
    parts: dict = {}
    for w, view in _views(inst, origin):
        parts.setdefault(functional(view), []).append(w)
    return {k: math.fsum(v) for k, v in sorted(parts.items())}


def exact_conditional(inst: FiniteInstance, event: Functional, condition: Functional,
                      origin: Optional[Sequence[int]] = None) -> float:
    """Exact ``P(event | condition)``."""
    joint, marg = [], []
    for w, view in _views(inst, origin):
        if condition(view):
            marg.append(w)
            if event(view):
                joint.append(w)
    pe = math.fsum(marg)
    if pe <= 0.0:
        raise OracleError("conditioning event has probability zero")
    return math.fsum(joint) / pe


# -- instance files ---------------------------------------------------------

_TUPLE = re.compile(r"^\(?\s*(-?\d+(?:\s*,\s*-?\d+)*)\s*\)?$")


def _parse_vertex(tok: str, d: int, lineno: int) -> Vertex:
    m = _TUPLE.match(tok.strip())
    if not m:
        raise OracleError(f"line {lineno}: cannot parse vertex {tok!r}")
    v = tuple(int(c) for c in m.group(1).split(","))
    if len(v) != d:
        raise OracleError(f"line {lineno}: vertex {v} does not have dimension {d}")
    return v


def parse_instance(text: str, p: float, model: str = "nn", L: int = 1,
                   cube_norm: str = "l2") -> FiniteInstance:
    d = None
    edges = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if d is None:
            m = re.fullmatch(r"d\s*=\s*(\d+)", line)
            if not m:
                raise OracleError(f"line {lineno}: expected 'd=<int>' header, got {line!r}")
            d = int(m.group(1))
            continue
        toks = line.split()
        if len(toks) != 2:
            raise OracleError(f"line {lineno}: expected two vertices, got {line!r}")
        edges.append(Edge.of(_parse_vertex(toks[0], d, lineno), _parse_vertex(toks[1], d, lineno)))
    if d is None:
        raise OracleError("instance has no 'd=<int>' header")
    return FiniteInstance(tuple(edges), float(p), LatticeSpec(d, model, L, cube_norm))


def read_instance(path: str | Path, p: float, **spec_kw) -> FiniteInstance:
    return parse_instance(Path(path).read_text(), p, **spec_kw)


def format_instance(inst: FiniteInstance) -> str:
    fmt = lambda v: "(" + ",".join(str(c) for c in v) + ")"
    lines = [f"d={inst.spec.d}"] + [f"{fmt(e.u)} {fmt(e.v)}" for e in inst.edges]
    return "\n".join(lines) + "\n"


# -- brute-force references -------------------------------------------------

def naive_distances(origin: Sequence[int], provider, spec: LatticeSpec, R: int) -> dict:
    """Graph distances in the ``Q_R``-restricted open cluster of ``origin``.

    Independent of the explorer: a depth-first flood collects the cluster and
    its open bonds, then Dijkstra (unit weights) computes the distances.
    """
    origin = tuple(origin)
    seen = {origin: 0}
    order = [origin]
    stack = [origin]
    bonds = set()
    while stack:
        u = stack.pop()
        for v in neighbors(u, spec):
            if shell_index(v, spec) > R:
                continue
            e = Edge.of(u, v)
            if not provider.is_open(e.u, e.v):
                continue
            bonds.add(e)
            if v not in seen:
                seen[v] = len(order)
                order.append(v)
                stack.append(v)
    n = len(order)
    if not bonds:
        return {origin: 0}
    rows = [seen[e.u] for e in bonds]
    cols = [seen[e.v] for e in bonds]
    g = coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n)).tocsr()
    dist = dijkstra(g, directed=False, indices=0, unweighted=True)
    return {v: int(dist[i]) for i, v in enumerate(order)}


def _simple_paths(adj: dict, start: int, goals: set, banned: frozenset):
    """All simple paths from ``start`` ending at the first visit of a goal vertex."""
    if start in banned:
        return
    stack = [(start, (start,))]
    while stack:
        v, path = stack.pop()
        if v in goals:
            yield path
            continue
        for w in adj.get(v, ()):
            if w not in path and w not in banned:
                stack.append((w, path + (w,)))


def naive_backbone(view: ClusterView, R: Optional[int] = None, disjoint: str = "vertex") -> frozenset:
    """Backbone bonds by exhaustive search over pairs of disjoint open paths.

    For each open bond and each orientation ``(a, b)``, look for a path
    ``0 -> a`` and a path ``b -> dQ_R`` that share no vertex
    (``disjoint="vertex"``) or no bond (``disjoint="edge"``; neither path may
    use the bond itself).  Exponential: intended for clusters of <= 20 vertices.
    """
    if disjoint not in ("vertex", "edge"):
        raise OracleError(f"disjoint must be 'vertex' or 'edge', got {disjoint!r}")
    R = view.R if R is None else int(R)
    if view.size > 20:
        raise OracleError("naive backbone search is limited to 20 cluster vertices")
    adj: dict = {}
    for i, j in view.edges:
        adj.setdefault(int(i), []).append(int(j))
        adj.setdefault(int(j), []).append(int(i))
    boundary = {int(i) for i in np.flatnonzero(view.shells == R)}
    if not boundary:
        return frozenset()
    vs = view.vertices

    def bondset(path):
        return {frozenset(pair) for pair in zip(path, path[1:])}

    out = set()
    for i, j in view.edges:
        i, j = int(i), int(j)
        found = False
        for a, b in ((i, j), (j, i)):
            for p1 in _simple_paths(adj, 0, {a}, frozenset()):
                if disjoint == "vertex":
                    ban = frozenset(p1)
                    if any(True for _ in _simple_paths(adj, b, boundary, ban)):
                        found = True
                else:
                    e1 = bondset(p1)
                    if frozenset((a, b)) in e1:
                        continue
                    for p2 in _simple_paths(adj, b, boundary, frozenset()):
                        e2 = bondset(p2)
                        if frozenset((a, b)) not in e2 and not (e1 & e2):
                            found = True
                            break
                if found:
                    break
            if found:
                break
        if found:
            out.add(Edge.of(vs[i], vs[j]))
    return frozenset(out)
