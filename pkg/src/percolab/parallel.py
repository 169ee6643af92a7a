"""Replica-parallel evaluation with index-ordered results.

Each replica's value is a pure function of its index, so results are placed
by index and reduced in index order: the worker count never changes output.
"""
from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from typing import Callable, Sequence

import numpy as np


def default_workers() -> int:
    env = os.environ.get("PERCOLAB_WORKERS")
    return max(1, int(env)) if env else 1


def _run_chunk(fn, indices):
    return [fn(i) for i in indices]


def replica_map(fn: Callable[[int], object], n: int, workers: int | None = None,
                start: int = 0, chunks_per_worker: int = 4) -> list:
    """``[fn(start), ..., fn(start + n - 1)]``, optionally across processes.

    ``fn`` must be picklable when ``workers > 1`` (a module-level function or
    a ``functools.partial`` of one).
    """
    workers = default_workers() if workers is None else max(1, int(workers))
    indices = range(start, start + n)
    if workers == 1 or n < 2:
        return [fn(i) for i in indices]
    nchunks = min(n, workers * chunks_per_worker)
    bounds = np.linspace(0, n, nchunks + 1).astype(int)
    pieces: Sequence[range] = [indices[a:b] for a, b in zip(bounds[:-1], bounds[1:])]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        results = pool.map(_run_chunk, [fn] * len(pieces), pieces)
        out = []
        for part in results:
            out.extend(part)
    return out


def replica_array(fn: Callable[[int], object], n: int, workers: int | None = None,
                  start: int = 0, dtype=float) -> np.ndarray:
    """:func:`replica_map` collected into an array (one row per replica)."""
    return np.asarray(replica_map(fn, n, workers, start), dtype=dtype)
