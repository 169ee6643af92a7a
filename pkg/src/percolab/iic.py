"""Finite-volume proxies of the incipient infinite cluster by rejection.

A conditioned sample draws fresh configurations (attempt ``a`` of replica
``i`` uses the key ``derive_replica_key(seed, i * 2**32 + a)``) until the
conditioning event holds.  The accepted configuration is exactly distributed
as ``P_p( . | event)``.  Two events are offered:

* :class:`ArmCondition` ``{0 <-> dQ_R}``, the cheap default;
* :class:`PointCondition` ``{0 <-> x}`` inside the exploration cube.

Whether arm conditioning converges to the same limit as point conditioning
is left open; both are exposed so they can be compared.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import partial
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .configuration import RandomEdges, attempt_key
from .explorer import ClusterView, ExploreLimits, arm_depth, explore
from .lattice import Edge, LatticeSpec, Vertex, shell_index
from .parallel import replica_map


class ConditioningFailed(RuntimeError):
    """No accepted configuration within ``max_attempts``."""

    def __init__(self, attempts: int, message: str = ""):
        self.attempts = attempts
        super().__init__(message or f"conditioning event not observed in {attempts} attempts")


@dataclass(frozen=True)
class ArmCondition:
    R_cond: int

    def __post_init__(self):
        if int(self.R_cond) != self.R_cond or self.R_cond < 1:
            raise ValueError(f"conditioning radius must be an integer >= 1, got {self.R_cond}")

    def required_radius(self, spec: LatticeSpec) -> int:
        return int(self.R_cond)

    def holds(self, view: ClusterView) -> bool:
        return view.max_shell >= self.R_cond


@dataclass(frozen=True)
class PointCondition:
    x: Vertex

    def __post_init__(self):
        x = tuple(int(c) for c in self.x)
        if not any(x):
            raise ValueError("point conditioning needs x != 0")
        object.__setattr__(self, "x", x)

    def required_radius(self, spec: LatticeSpec) -> int:
        return shell_index(self.x, spec)

    def holds(self, view: ClusterView) -> bool:
        return self.x in view


ConditioningMode = Union[ArmCondition, PointCondition]


@dataclass
class ConditionedSample:
    view: ClusterView
    attempts: int


def sample_conditioned(mode: ConditioningMode, p: float, master_seed: int, replica_index: int,
                       spec: LatticeSpec, limits: ExploreLimits, max_attempts: int = 10**6,
                       support: Optional[frozenset] = None) -> ConditionedSample:
    """Rejection-sample one configuration from ``P_p( . | mode)``.

    Parameters
    ----------
    mode : ArmCondition or PointCondition
    p : float
    master_seed, replica_index : int
        Identify the replica; attempts are keyed deterministically from them.
    spec : LatticeSpec
    limits : ExploreLimits
        Exploration caps for the returned view; ``limits.R`` must be at least
        the radius needed to decide the event.
    max_attempts : int
    support : frozenset of Edge, optional
        Restrict randomness to a finite bond set (all other bonds closed).

    Returns
    -------
    ConditionedSample
        The accepted view and the number of attempts used.

    Raises
    ------
    ConditioningFailed
        After ``max_attempts`` rejections.
    """
    need = mode.required_radius(spec)
    if limits.R < need:
        raise ValueError(f"exploration radius {limits.R} cannot decide the event (needs {need})")
    if max_attempts < 1:
        raise ValueError("max_attempts must be >= 1")
    # arm events can be rejected cheaply by the best-first search (exact for nn bonds)
    quick = isinstance(mode, ArmCondition) and spec.model == "nn" and support is None
    for attempt in range(max_attempts):
        provider = RandomEdges(attempt_key(master_seed, replica_index, attempt), p, support)
        if quick and not arm_depth((0,) * spec.d, provider, spec, mode.R_cond).reached(mode.R_cond):
            continue
        view = explore((0,) * spec.d, provider, spec, limits)
        if mode.holds(view):
            return ConditionedSample(view, attempt + 1)
    raise ConditioningFailed(max_attempts)


@dataclass(frozen=True)
class EdgeOpen:
    """Cylinder event: the bond ``edge`` is open and touches the cluster."""

    edge: Edge

    def __call__(self, view: ClusterView) -> bool:
        return Edge.of(*self.edge) in view.open_edges_used


@dataclass(frozen=True)
class BallAtLeast:
    """Cylinder event ``{|B_r| >= k}``."""

    r: int
    k: int

    def __call__(self, view: ClusterView) -> bool:
        return int((view.dist <= self.r).sum()) >= self.k


def edge_open_event(edge) -> EdgeOpen:
    return EdgeOpen(Edge.of(*edge))


def ball_at_least(r: int, k: int) -> BallAtLeast:
    return BallAtLeast(int(r), int(k))


@dataclass(frozen=True)
class ConvergenceRow:
    R: int
    estimate: float
    ci: float
    n: int
    mean_attempts: float


def _cylinder_replica(i, *, event, p, seed, spec, mode, direction, R, max_attempts, support):
    if mode == "arm":
        cond = ArmCondition(R)
    else:
        cond = PointCondition(tuple(R * c for c in direction))
    limits = ExploreLimits(max(R, cond.required_radius(spec)))
    s = sample_conditioned(cond, p, seed, i, spec, limits, max_attempts, support)
    return float(bool(event(s.view))), s.attempts


def cylinder_convergence(event: Callable[[ClusterView], bool], p: float, radii: Sequence[int],
                         n: int, spec: LatticeSpec, master_seed: int = 0, mode: str = "arm",
                         direction: Optional[Sequence[int]] = None, max_attempts: int = 10**6,
                         support: Optional[frozenset] = None, workers: int | None = None,
                         ) -> list[ConvergenceRow]:
    """Estimates of ``P_p(F | conditioning at radius R_i)`` for increasing ``R_i``.

    ``mode="arm"`` conditions on ``{0 <-> dQ_R}``; ``mode="point"``
    conditions on ``{0 <-> R * direction}`` (default direction ``e_1``).
    The event must be decidable from a view explored in ``Q_R``.
    """
    from .estimators import proportion_ci

    if mode not in ("arm", "point"):
        raise ValueError(f"unknown conditioning mode {mode!r}")
    radii = [int(r) for r in radii]
    if any(b <= a for a, b in zip(radii, radii[1:])):
        raise ValueError("radii must be strictly increasing")
    direction = tuple(direction) if direction is not None else (1,) + (0,) * (spec.d - 1)
    rows = []
    for R in radii:
        fn = partial(_cylinder_replica, event=event, p=p, seed=master_seed, spec=spec, mode=mode,
                     direction=direction, R=R, max_attempts=max_attempts, support=support)
        res = np.asarray(replica_map(fn, n, workers), dtype=float)
        k = int(res[:, 0].sum())
        rows.append(ConvergenceRow(R, k / n, proportion_ci(k, n), n, float(res[:, 1].mean())))
    return rows
