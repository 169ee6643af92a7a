"""Geometry of the integer lattice Z^d.

Vertices are plain tuples of ints.  Bonds are either nearest-neighbour
(``||x - y||_1 = 1``) or spread-out with Euclidean range ``L``
(``0 < ||x - y||_2 <= L``); at ``L = 1`` the two models coincide.

Cubes ``Q_r`` and shells ``dQ_k = Q_k \\ Q_{k-1}`` are described through
:func:`shell_index`, the ceiling of the chosen norm, so that a vertex lies in
``Q_r`` iff its shell index is at most ``r``.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import NamedTuple, Sequence

import numpy as np

Vertex = tuple[int, ...]

NORMS = ("l1", "l2", "linf")
MODELS = ("nn", "spread")

#: Largest radius accepted anywhere; keeps coordinates far from int64 overflow.
MAX_RADIUS = 2**31


class LatticeError(ValueError):
    """Invalid lattice parameters or mismatched vertex dimension."""


@dataclass(frozen=True)
class LatticeSpec:
    """Dimension, bond model and the norm used for cubes.

    Parameters
    ----------
    d : int
        Lattice dimension, ``d >= 1``.
    model : {"nn", "spread"}
        Nearest-neighbour bonds or spread-out bonds of Euclidean range ``L``.
    L : int
        Range for the spread-out model (ignored for ``"nn"``).
    cube_norm : {"l2", "l1", "linf"}
        Norm defining ``Q_r``.
    """

    d: int
    model: str = "nn"
    L: int = 1
    cube_norm: str = "l2"

    def __post_init__(self):
        if not isinstance(self.d, (int, np.integer)) or self.d < 1:
            raise LatticeError(f"dimension must be an integer >= 1, got {self.d!r}")
        if self.model not in MODELS:
            raise LatticeError(f"unknown model {self.model!r}; expected one of {MODELS}")
        if self.model == "spread" and (int(self.L) != self.L or self.L < 1):
            raise LatticeError(f"spread-out range must be an integer >= 1, got {self.L!r}")
        if self.cube_norm not in NORMS:
            raise LatticeError(f"unknown norm {self.cube_norm!r}; expected one of {NORMS}")

    @property
    def max_step(self) -> int:
        """Upper bound on the change of any norm along one bond."""
        if self.model == "nn":
            return 1
        # l1 length of a Euclidean-range-L offset is at most L*sqrt(d)
        return int(math.ceil(self.L * (math.sqrt(self.d) if self.cube_norm == "l1" else 1)))

    @property
    def degree(self) -> int:
        return len(offsets(self))


class Edge(NamedTuple):
    """A bond stored with its lexicographically smaller endpoint first."""

    u: Vertex
    v: Vertex

    @classmethod
    def of(cls, a: Sequence[int], b: Sequence[int]) -> "Edge":
        a, b = tuple(int(c) for c in a), tuple(int(c) for c in b)
        if a == b:
            raise LatticeError(f"degenerate edge at {a}")
        if len(a) != len(b):
            raise LatticeError("edge endpoints have different dimensions")
        return cls(a, b) if a < b else cls(b, a)


@lru_cache(maxsize=None)
def _offsets(d: int, model: str, L: int) -> tuple[Vertex, ...]:
    if model == "nn":
        out = []
        for i in range(d):
            for s in (-1, 1):
                e = [0] * d
                e[i] = s
                out.append(tuple(e))
    else:
        rng = range(-L, L + 1)
        out = [
            t for t in itertools.product(rng, repeat=d)
            if any(t) and sum(c * c for c in t) <= L * L
        ]
    return tuple(sorted(out))


def offsets(spec: LatticeSpec) -> tuple[Vertex, ...]:
    """All neighbour offsets of the model, in lexicographic order."""
    return _offsets(int(spec.d), spec.model, int(spec.L) if spec.model == "spread" else 1)


def positive_offsets(spec: LatticeSpec) -> tuple[Vertex, ...]:
    """Offsets that are lexicographically positive; one per undirected bond direction."""
    zero = (0,) * spec.d
    return tuple(o for o in offsets(spec) if o > zero)


def _check_dim(v: Sequence[int], spec: LatticeSpec) -> None:
    if len(v) != spec.d:
        raise LatticeError(f"vertex {tuple(v)} has dimension {len(v)}, lattice has d={spec.d}")


def neighbors(v: Sequence[int], spec: LatticeSpec) -> list[Vertex]:
    """Lattice neighbours of ``v`` in lexicographic order."""
    _check_dim(v, spec)
    return [tuple(a + b for a, b in zip(v, o)) for o in offsets(spec)]


def is_bond(a: Sequence[int], b: Sequence[int], spec: LatticeSpec) -> bool:
    _check_dim(a, spec)
    _check_dim(b, spec)
    diff = tuple(y - x for x, y in zip(a, b))
    if not any(diff):
        return False
    if spec.model == "nn":
        return sum(abs(c) for c in diff) == 1
    return sum(c * c for c in diff) <= spec.L * spec.L


def ceil_sqrt(s: int) -> int:
    """Smallest integer k with k*k >= s, for integer s >= 0."""
    k = math.isqrt(s)
    return k if k * k == s else k + 1


def shell_index(v: Sequence[int], spec: LatticeSpec | str = "l2") -> int:
    """The unique k >= 0 with ``v`` in the shell ``dQ_k``, i.e. ``ceil(||v||)``.

    ``spec`` may be a :class:`LatticeSpec` or just a norm name.
    """
    norm = spec.cube_norm if isinstance(spec, LatticeSpec) else spec
    if isinstance(spec, LatticeSpec):
        _check_dim(v, spec)
    if norm == "l2":
        return ceil_sqrt(sum(int(c) * int(c) for c in v))
    if norm == "l1":
        return sum(abs(int(c)) for c in v)
    if norm == "linf":
        return max((abs(int(c)) for c in v), default=0)
    raise LatticeError(f"unknown norm {norm!r}")


def shell_indices(coords: np.ndarray, norm: str = "l2") -> np.ndarray:
    """Vectorised :func:`shell_index` over the rows of an integer array."""
    coords = np.asarray(coords, dtype=np.int64)
    if coords.ndim != 2:
        raise LatticeError("coords must be a 2-d array")
    if coords.shape[0] == 0:
        return np.zeros(0, dtype=np.int64)
    if norm == "l1":
        return np.abs(coords).sum(axis=1)
    if norm == "linf":
        return np.abs(coords).max(axis=1)
    if norm != "l2":
        raise LatticeError(f"unknown norm {norm!r}")
    s = (coords * coords).sum(axis=1)
    k = np.floor(np.sqrt(s.astype(np.float64))).astype(np.int64)
    # float sqrt may be off by one near perfect squares
    k[k * k > s] -= 1
    k[(k + 1) * (k + 1) <= s] += 1
    return np.where(k * k == s, k, k + 1)


def in_cube(v: Sequence[int], r: int, spec: LatticeSpec) -> bool:
    return shell_index(v, spec) <= r


def cube_vertices(r: int, spec: LatticeSpec) -> list[Vertex]:
    """All vertices of ``Q_r``, lexicographically sorted (small ``r`` and ``d`` only)."""
    if r < 0:
        return []
    return [
        t for t in itertools.product(range(-r, r + 1), repeat=spec.d)
        if shell_index(t, spec.cube_norm) <= r
    ]


def cube_size(r: int, spec: LatticeSpec) -> int:
    """``|Q_r|`` without enumerating the cube (counts coordinate budgets one axis at a time)."""
    r = int(r)
    if r < 0:
        return 0
    norm = spec.cube_norm
    if norm == "linf":
        return (2 * r + 1) ** spec.d
    cost = (lambda c: c * c) if norm == "l2" else abs
    budget = r * r if norm == "l2" else r
    ways = [1] + [0] * budget
    for _ in range(spec.d):
        nxt = [0] * (budget + 1)
        for used, w in enumerate(ways):
            if w:
                for c in range(-r, r + 1):
                    t = used + cost(c)
                    if t <= budget:
                        nxt[t] += w
        ways = nxt
    return sum(ways)


def validate_radius(r: int, name: str = "radius") -> int:
    if int(r) != r or r < 0:
        raise LatticeError(f"{name} must be a non-negative integer, got {r!r}")
    if r > MAX_RADIUS:
        raise LatticeError(f"{name} {r} exceeds the supported cap 2**31")
    return int(r)


def origin(d: int) -> Vertex:
    return (0,) * d
