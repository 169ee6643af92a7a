"""Lazily evaluated percolation configurations.

Every bond's state is a pure function of a 64-bit configuration key and the
canonical bond, so a configuration on the infinite lattice costs nothing until
a bond is queried, and the same key realises all values of ``p`` at once
(monotone coupling): a bond is open at ``p`` iff ``U(key, bond) < p``.

Bond encoding
-------------
A bond ``(a, b)`` with ``a < b`` lexicographically is encoded as the word
sequence ``w_i = 256 * a_i + (b_i - a_i) + 128`` (``i = 1..d``, reduced mod
2**64).  The map is injective for ``|b_i - a_i| < 128``.  The uniform is

    h = mix64(key ^ KEY_SALT)
    h = mix64(h ^ w_i)            for i = 1..d
    U = (mix64(h + GOLDEN) >> 11) * 2**-53

where ``mix64`` is the SplitMix64 finaliser.  ``U`` has 53 bits of precision.
The compiled kernel implements the identical function.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .lattice import Edge, Vertex

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15
KEY_SALT = 0x2545F4914F6CDD1D
SEED_SALT = 0x5851F42D4C957F2D
_TWO53 = 9007199254740992.0


class ConfigurationError(ValueError):
    pass


def mix64(z: int) -> int:
    """SplitMix64 finaliser; a bijection on 64-bit words."""
    z &= MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


@dataclass(frozen=True)
class ConfigKey:
    """Identifies one sampled configuration: ``(master_seed, replica_index)``."""

    master_seed: int
    replica_index: int

    @property
    def word(self) -> int:
        """The mixed 64-bit key fed to the bond hash."""
        s = mix64((self.master_seed & MASK64) ^ SEED_SALT)
        return mix64((s + ((self.replica_index + 1) & MASK64) * GOLDEN) & MASK64)


def derive_replica_key(master_seed: int, replica_index: int) -> ConfigKey:
    """Key of replica ``replica_index`` under ``master_seed``.

    For a fixed seed the map ``replica_index -> key.word`` is a bijection on
    64-bit words, so distinct replicas never share a key.
    """
    return ConfigKey(int(master_seed) & MASK64, int(replica_index) & MASK64)


def attempt_key(master_seed: int, replica_index: int, attempt: int) -> ConfigKey:
    """Key of rejection attempt ``attempt`` of replica ``replica_index``."""
    return derive_replica_key(master_seed, (int(replica_index) << 32) + int(attempt))


def key_word(key: ConfigKey | int) -> int:
    return key.word if isinstance(key, ConfigKey) else int(key) & MASK64


def edge_words(a: Sequence[int], b: Sequence[int]) -> list[int]:
    """Injective word encoding of the canonical bond ``(a, b)``."""
    out = []
    for x, y in zip(a, b):
        delta = y - x
        if not -128 < delta < 128:
            raise ConfigurationError("bond offset component out of encodable range")
        out.append((256 * x + delta + 128) & MASK64)
    return out


def edge_hash(key: ConfigKey | int, a: Sequence[int], b: Sequence[int]) -> int:
    h = mix64(key_word(key) ^ KEY_SALT)
    for w in edge_words(a, b):
        h = mix64(h ^ w)
    return mix64((h + GOLDEN) & MASK64)


def edge_uniform(key: ConfigKey | int, edge: Edge) -> float:
    """The coupling variable ``U(key, edge)`` in ``[0, 1)``."""
    return (edge_hash(key, edge.u, edge.v) >> 11) / _TWO53


def _check_p(p: float) -> float:
    p = float(p)
    if not 0.0 <= p <= 1.0:
        raise ConfigurationError(f"p must lie in [0, 1], got {p}")
    return p


class RandomEdges:
    """Bernoulli(p) bond states driven by a configuration key.

    Parameters
    ----------
    key : ConfigKey or int
        Configuration key (or an already mixed 64-bit word).
    p : float
        Bond density.
    support : iterable of Edge, optional
        If given, only these bonds are random; every other bond is closed.
        Used to run the sampler on a finite instance.
    """

    def __init__(self, key: ConfigKey | int, p: float, support: Iterable[Edge] | None = None):
        self.key = key
        self.word = key_word(key)
        self.p = _check_p(p)
        if support is None or isinstance(support, frozenset):
            # frozensets are trusted to hold canonical Edge tuples
            self.support = support
        else:
            self.support = frozenset(Edge.of(*e) for e in support)

    def uniform(self, a: Vertex, b: Vertex) -> float:
        return (edge_hash(self.word, a, b) >> 11) / _TWO53

    @property
    def candidate_adjacency(self) -> dict | None:
        """Neighbour lists restricted to bonds that can be open (finite support only)."""
        return None if self.support is None else support_adjacency(self.support)

    def is_open(self, a: Vertex, b: Vertex) -> bool:
        """State of the canonical bond ``(a, b)``, ``a < b``."""
        if self.support is not None and (a, b) not in self.support:
            return False
        return self.uniform(a, b) < self.p

    def edge_state(self, e: Edge) -> bool:
        e = Edge.of(*e)
        return self.is_open(e.u, e.v)

    def at(self, p: float) -> "RandomEdges":
        """Same key at another density (coupled configuration)."""
        return RandomEdges(self.key, p, self.support)

    def __repr__(self):
        extra = "" if self.support is None else f", support={len(self.support)} bonds"
        return f"RandomEdges(word={self.word:#018x}, p={self.p}{extra})"


class ExplicitEdges:
    """Bond states given by a finite map, with a default for unlisted bonds."""

    def __init__(self, states: Mapping[Edge, bool] | Iterable[tuple[Edge, bool]], default: bool = False):
        items = states.items() if isinstance(states, Mapping) else states
        self.states = {Edge.of(*e): bool(s) for e, s in items}
        self.default = bool(default)

    def is_open(self, a: Vertex, b: Vertex) -> bool:
        return self.states.get((a, b), self.default)

    def edge_state(self, e: Edge) -> bool:
        e = Edge.of(*e)
        return self.is_open(e.u, e.v)

    @property
    def candidate_adjacency(self) -> dict | None:
        if self.default:
            return None
        return support_adjacency(frozenset(e for e, s in self.states.items() if s))

    @classmethod
    def open_set(cls, open_edges: Iterable[Edge], closed: Iterable[Edge] = ()) -> "ExplicitEdges":
        states = {Edge.of(*e): True for e in open_edges}
        states.update({Edge.of(*e): False for e in closed})
        return cls(states)


# -- vectorised forms over many keys ---------------------------------------------

def mix64_array(z: np.ndarray) -> np.ndarray:
    """:func:`mix64` applied elementwise to a ``uint64`` array (wrapping arithmetic)."""
    z = np.asarray(z, dtype=np.uint64)
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


def replica_words(master_seed: int, indices) -> np.ndarray:
    """``derive_replica_key(master_seed, i).word`` for every ``i`` in ``indices``."""
    s = np.uint64(mix64((int(master_seed) & MASK64) ^ SEED_SALT))
    idx = np.asarray(indices, dtype=np.uint64)
    return mix64_array(s + (idx + np.uint64(1)) * np.uint64(GOLDEN))


def edge_uniforms(words: np.ndarray, edge: Edge) -> np.ndarray:
    """``U(key, edge)`` for an array of key words; equals :func:`edge_uniform` elementwise."""
    h = mix64_array(np.asarray(words, dtype=np.uint64) ^ np.uint64(KEY_SALT))
    for w in edge_words(edge.u, edge.v):
        h = mix64_array(h ^ np.uint64(w))
    h = mix64_array(h + np.uint64(GOLDEN))
    return (h >> np.uint64(11)).astype(np.float64) / _TWO53


def open_masks(words: np.ndarray, edges: Sequence[Edge], p: float) -> np.ndarray:
    """Bit ``j`` of entry ``i`` is the state of ``edges[j]`` under key ``words[i]`` (at most 63 bonds)."""
    if len(edges) > 63:
        raise ConfigurationError("at most 63 bonds fit in a state mask")
    p = _check_p(p)
    mask = np.zeros(len(words), dtype=np.int64)
    for j, e in enumerate(edges):
        mask |= (edge_uniforms(words, e) < p).astype(np.int64) << j
    return mask


_adjacency_cache: dict = {}


def support_adjacency(support: frozenset) -> dict:
    """Sorted neighbour lists of the graph formed by ``support`` (memoised)."""
    adj = _adjacency_cache.get(support)
    if adj is None:
        lists: dict = {}
        for a, b in support:
            lists.setdefault(a, []).append(b)
            lists.setdefault(b, []).append(a)
        adj = {v: tuple(sorted(ns)) for v, ns in lists.items()}
        if len(_adjacency_cache) > 256:
            _adjacency_cache.clear()
        _adjacency_cache[support] = adj
    return adj


def edge_state(provider, e: Edge) -> bool:
    """Open (True) or closed (False) state of bond ``e`` under ``provider``."""
    return provider.edge_state(e)
