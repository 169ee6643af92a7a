"""Monte Carlo estimators, power-law fits and the dyadic dimension diagnostic.

Every estimator draws replica ``i`` from ``derive_replica_key(seed, i)`` (or,
for conditioned samples, from the attempt keys of replica ``i``) and reduces
per-replica values in index order, so output is bit-identical for a given
seed regardless of the worker count.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import partial
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import stats

from .configuration import RandomEdges, derive_replica_key
from .explorer import (
    ClusterView,
    ExploreLimits,
    arm_depth,
    boundary_distance,
    explore,
    restricted_component,
)
from .iic import ArmCondition, sample_conditioned
from .lattice import LatticeSpec, Vertex, shell_index
from .parallel import replica_map

Z95 = 1.959963984540054
WILSON_BELOW = 30


class EstimationError(ValueError):
    pass


# -- intervals ----------------------------------------------------------------

def mean_ci(values) -> tuple[float, float]:
    """Sample mean and normal-approximation 95% half-width."""
    x = np.asarray(values, dtype=float)
    if x.size == 0:
        raise EstimationError("need at least one sample")
    mean = float(x.mean())
    if x.size == 1:
        return mean, 0.0
    return mean, float(Z95 * x.std(ddof=1) / math.sqrt(x.size))


def wilson_interval(k: int, n: int, z: float = Z95) -> tuple[float, float]:
    if n <= 0:
        raise EstimationError("need at least one trial")
    phat = k / n
    denom = 1 + z * z / n
    centre = (phat + z * z / (2 * n)) / denom
    half = z * math.sqrt(phat * (1 - phat) / n + z * z / (4 * n * n)) / denom
    return max(0.0, centre - half), min(1.0, centre + half)


def proportion_ci(k: int, n: int) -> float:
    """95% half-width for ``k`` successes in ``n``; Wilson when either count is below 30."""
    if n <= 0:
        raise EstimationError("need at least one trial")
    if min(k, n - k) < WILSON_BELOW:
        lo, hi = wilson_interval(k, n)
        return (hi - lo) / 2
    phat = k / n
    return Z95 * math.sqrt(phat * (1 - phat) / n)


def mc_mean_ci(sampler: Callable[[int], float], n: int, workers: int | None = None) -> tuple[float, float]:
    """Mean and 95% half-width of ``sampler(i)`` over replicas ``i = 0..n-1``."""
    if n < 1:
        raise EstimationError("n must be >= 1")
    return mean_ci(replica_map(sampler, n, workers))


# -- fits ---------------------------------------------------------------------

def fit_scaling(points: Sequence[tuple[float, float]]) -> tuple[float, float]:
    """Least-squares slope of ``log mean`` against ``log r`` and its standard error."""
    pts = [(float(r), float(m)) for r, m in points]
    if len(pts) < 2:
        raise EstimationError("need at least two points to fit a slope")
    if any(m <= 0 for _, m in pts) or any(r <= 0 for r, _ in pts):
        raise EstimationError("radii and means must be positive for a log-log fit")
    x = np.log([r for r, _ in pts])
    y = np.log([m for _, m in pts])
    if len(pts) == 2:
        return float((y[1] - y[0]) / (x[1] - x[0])), 0.0
    res = stats.linregress(x, y)
    return float(res.slope), float(res.stderr)


def fit_prefactor(points: Sequence[tuple[float, float]], slope: float) -> float:
    """``C`` in ``mean ~ C r**slope``, geometric mean of the residual ratios."""
    return float(np.exp(np.mean([math.log(m) - slope * math.log(r) for r, m in points])))


@dataclass(frozen=True)
class ScalingPoint:
    r: float
    mean: float
    ci_halfwidth: float
    n: int
    flag_rate: float = 0.0


@dataclass
class ScalingEstimate:
    """Per-radius means with CIs and the fitted log-log slope."""

    points: list
    slope: float = math.nan
    slope_stderr: float = math.nan
    prefactor: float = math.nan
    excluded: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        rs = [p.r for p in self.points]
        if any(b <= a for a, b in zip(rs, rs[1:])):
            raise EstimationError("radii must be strictly increasing")

    @property
    def radii(self) -> list:
        return [p.r for p in self.points]

    @property
    def means(self) -> list:
        return [p.mean for p in self.points]

    def rows(self) -> list[tuple]:
        return [(p.r, p.mean, p.ci_halfwidth, p.n) for p in self.points]


def _fit_into(est: ScalingEstimate, max_flag_rate: Optional[float]) -> ScalingEstimate:
    usable = []
    for p in est.points:
        if max_flag_rate is not None and p.flag_rate > max_flag_rate:
            est.excluded.append((p.r, "flag rate"))
        elif p.mean <= 0:
            est.excluded.append((p.r, "non-positive mean"))
        else:
            usable.append((p.r, p.mean))
    if len(usable) >= 2:
        est.slope, est.slope_stderr = fit_scaling(usable)
        est.prefactor = fit_prefactor(usable, est.slope)
    else:
        est.meta["fit"] = "rejected: fewer than two usable radii"
    return est


@dataclass
class TailCurve:
    """Empirical exceedance probabilities over a parameter grid at fixed ``r``."""

    target: str
    r: int
    params: list
    probs: list
    cis: list
    n: int
    meta: dict = field(default_factory=dict)

    def rows(self) -> list[tuple]:
        return [(g, p, c, self.n) for g, p, c in zip(self.params, self.probs, self.cis)]


# -- finite instances ---------------------------------------------------------------

@dataclass
class InstanceSamples:
    """Per-replica functional values on a finite instance (one row per replica)."""

    values: np.ndarray
    attempts: np.ndarray
    distinct_configurations: int

    def mean_ci(self, j: int) -> tuple[float, float]:
        return mean_ci(self.values[:, j])


def instance_samples(inst, functionals: Sequence[Callable], n: int, seed: int = 0,
                     condition: Optional[Callable] = None, max_attempts: int = 10**6) -> InstanceSamples:
    """Monte Carlo draws of ``functionals`` on a finite instance.

    Replica ``i`` uses the key ``derive_replica_key(seed, i)``; with a
    ``condition`` it is rejection-sampled over the attempt keys exactly as
    :func:`percolab.iic.sample_conditioned` does, so every value equals what
    the per-replica sampler path returns.  Bond states are hashed for all
    replicas at once and each distinct configuration is explored only once.
    """
    from .configuration import ExplicitEdges, open_masks, replica_words
    from .iic import ConditioningFailed

    if n < 1:
        raise EstimationError("n must be >= 1")
    edges = list(inst.edges)
    origin = (0,) * inst.spec.d
    cache: dict = {}

    def evaluate(mask: int):
        got = cache.get(mask)
        if got is None:
            provider = ExplicitEdges({e: bool(mask >> j & 1) for j, e in enumerate(edges)})
            view = explore(origin, provider, inst.spec, inst.limits, backend="python")
            held = True if condition is None else bool(condition(view))
            got = cache[mask] = (held, [float(f(view)) for f in functionals])
        return got

    idx = np.arange(n, dtype=np.int64)
    attempts = np.zeros(n, dtype=np.int64)
    chosen = np.zeros(n, dtype=np.int64)
    pending = idx
    for a in range(max_attempts):
        keys = (pending.astype(np.uint64) << np.uint64(32)) + np.uint64(a) if condition is not None \
            else pending.astype(np.uint64)
        masks = open_masks(replica_words(seed, keys), edges, inst.p)
        ok = np.array([evaluate(int(m))[0] for m in masks], dtype=bool)
        chosen[pending[ok]] = masks[ok]
        attempts[pending[ok]] = a + 1
        pending = pending[~ok]
        if len(pending) == 0:
            break
    else:
        raise ConditioningFailed(max_attempts)
    values = np.array([evaluate(int(m))[1] for m in chosen], dtype=float).reshape(n, len(functionals))
    return InstanceSamples(values, attempts, len(cache))


# -- replica kernels (module level so they pickle) -----------------------------

def _origin(spec: LatticeSpec) -> Vertex:
    return (0,) * spec.d


def _plain_view(i, seed, p, spec, limits) -> ClusterView:
    return explore(_origin(spec), RandomEdges(derive_replica_key(seed, i), p), spec, limits)


def _iic_view(i, seed, p, spec, limits, R_cond, max_attempts):
    s = sample_conditioned(ArmCondition(R_cond), p, seed, i, spec, limits, max_attempts)
    return s.view, s.attempts


def _two_point_replica(i, *, seed, p, spec, xs, R, iic_radius, max_attempts):
    limits = ExploreLimits(R)
    if iic_radius is None:
        view, attempts = _plain_view(i, seed, p, spec, limits), 1
    else:
        view, attempts = _iic_view(i, seed, p, spec, limits, iic_radius, max_attempts)
    return [float(x in view) for x in xs] + [float(view.hit_extrinsic_boundary), attempts]


def two_point(p: float, xs: Sequence[Sequence[int]], n: int, spec: LatticeSpec, seed: int = 0,
              iic_radius: Optional[int] = None, R: Optional[int] = None,
              max_attempts: int = 10**6, workers: int | None = None) -> ScalingEstimate:
    """``P_p(0 <-> x)`` against ``||x||`` with a fitted slope.

    Connections are decided inside ``Q_R`` (default ``R = 2 * max shell``).
    With ``iic_radius`` the configurations are conditioned on
    ``{0 <-> dQ_iic_radius}``.
    """
    xs = [tuple(int(c) for c in x) for x in xs]
    if not xs or any(not any(x) for x in xs):
        raise EstimationError("xs must be non-empty and exclude the origin")
    norms = [math.sqrt(sum(c * c for c in x)) for x in xs]
    order = np.argsort(norms, kind="stable")
    xs = [xs[i] for i in order]
    norms = [norms[i] for i in order]
    need = max(shell_index(x, spec) for x in xs)
    R = max(2 * need, iic_radius or 0) if R is None else int(R)
    if R < need:
        raise EstimationError(f"R={R} cannot decide connections to shell {need}")
    fn = partial(_two_point_replica, seed=seed, p=p, spec=spec, xs=xs, R=R,
                 iic_radius=iic_radius, max_attempts=max_attempts)
    res = np.asarray(replica_map(fn, n, workers), dtype=float)
    flag_rate = float(res[:, -2].mean())
    points = []
    for j, r in enumerate(norms):
        k = int(res[:, j].sum())
        points.append(ScalingPoint(r, k / n, proportion_ci(k, n), n, flag_rate))
    est = ScalingEstimate(points, meta={"estimator": "two_point", "p": p, "R": R, "seed": seed,
                                        "iic_radius": iic_radius, "xs": xs,
                                        "mean_attempts": float(res[:, -1].mean())})
    return _fit_into(est, None)


def _arm_replica(i, *, seed, p, spec, R, budget):
    a = arm_depth(_origin(spec), RandomEdges(derive_replica_key(seed, i), p), spec, R, budget)
    return a.max_shell, a.hit_budget


def arm_shells(p: float, R: int, n: int, spec: LatticeSpec, seed: int = 0,
               budget: Optional[int] = None, workers: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Per-replica farthest shell reached (capped at ``R``) and budget flags."""
    fn = partial(_arm_replica, seed=seed, p=p, spec=spec, R=int(R), budget=budget)
    res = np.asarray(replica_map(fn, n, workers), dtype=np.int64).reshape(-1, 2)
    return res[:, 0], res[:, 1].astype(bool)


def one_arm(p: float, radii: Sequence[int], n: int, spec: LatticeSpec, seed: int = 0,
            budget: Optional[int] = None, workers: int | None = None) -> ScalingEstimate:
    """``P_p(0 <-> dQ_r)`` for each radius, from one arm search per replica."""
    radii = sorted(int(r) for r in radii)
    if not radii or radii[0] < 1:
        raise EstimationError("radii must be positive")
    shells, flags = arm_shells(p, radii[-1], n, spec, seed, budget, workers)
    points = []
    for r in radii:
        k = int((shells >= r).sum())
        undecided = float(((shells < r) & flags).mean())
        points.append(ScalingPoint(r, k / n, proportion_ci(k, n), n, undecided))
    est = ScalingEstimate(points, meta={"estimator": "one_arm", "p": p, "seed": seed, "budget": budget})
    return _fit_into(est, 0.01)


OBSERVABLES = ("X_r", "X_rr", "B_r", "dX_rr")


def _observable_values(view: ClusterView, observable: str, radii: Sequence[int]) -> list[float]:
    out = []
    for r in radii:
        if observable == "X_r":
            out.append(float((view.shells <= r).sum()))
        elif observable == "B_r":
            out.append(float((view.dist <= r).sum()))
        else:
            comp = restricted_component(view, r)
            if observable == "X_rr":
                out.append(float(len(comp)))
            else:
                out.append(float((view.shells[comp] == r).sum()))
    return out


def _observable_flag(view: ClusterView, observable: str) -> float:
    if observable == "X_r":
        return float(view.hit_extrinsic_boundary or not view.complete)
    if observable == "B_r":
        return float(view.hit_budget)
    return float(view.hit_budget or view.hit_intrinsic_cap)


def _growth_replica(i, *, seed, p, spec, observable, radii, limits, R_cond, max_attempts):
    if R_cond is None:
        view, attempts = _plain_view(i, seed, p, spec, limits), 1
    else:
        view, attempts = _iic_view(i, seed, p, spec, limits, R_cond, max_attempts)
    return _observable_values(view, observable, radii) + [_observable_flag(view, observable), attempts]


def growth_limits(observable: str, radii: Sequence[int], spec: LatticeSpec,
                  R_cond: Optional[int] = None, budget: Optional[int] = None) -> ExploreLimits:
    """Exploration caps that make every requested radius decidable from one view."""
    rmax = max(radii)
    if observable == "X_r":
        R, cap = 2 * rmax, None
    elif observable == "B_r":
        R, cap = rmax * spec.max_step, rmax
    else:
        R, cap = rmax, None
    if R_cond is not None:
        # conditioning needs the whole cluster inside Q_{R_cond}
        R, cap = max(R, R_cond), None
    return ExploreLimits(R, intrinsic_radius=cap, vertex_budget=budget)


def growth_curves(observable: str, radii: Sequence[int], n: int, spec: LatticeSpec, p: float,
                  seed: int = 0, measure: str = "plain", R_cond: Optional[int] = None,
                  budget: Optional[int] = None, max_attempts: int = 10**6,
                  max_flag_rate: Optional[float] = 0.01, workers: int | None = None) -> ScalingEstimate:
    """Mean cluster counts against ``r`` with a log-log slope.

    Parameters
    ----------
    observable : {"X_r", "X_rr", "B_r", "dX_rr"}
        ``|X_r|`` (lower bound from a view of radius ``2 r_max``), ``|X_{r,r}|``,
        ``|B_r|`` or the outer shell ``|dX_{r,r}|``.
    measure : {"plain", "iic"}
        Unconditioned ``P_p`` or arm-conditioned on ``{0 <-> dQ_{R_cond}}``
        (default ``R_cond = 2 r_max``).
    max_flag_rate : float or None
        Radii whose truncation-flag rate exceeds this are left out of the fit
        (plain measure only; conditioned clusters leave every cube by design).
    """
    if observable not in OBSERVABLES:
        raise EstimationError(f"unknown observable {observable!r}; expected one of {OBSERVABLES}")
    if measure not in ("plain", "iic"):
        raise EstimationError(f"unknown measure {measure!r}")
    radii = sorted(int(r) for r in radii)
    if not radii or radii[0] < 1:
        raise EstimationError("radii must be positive integers")
    if measure == "iic":
        R_cond = 2 * radii[-1] if R_cond is None else int(R_cond)
    else:
        R_cond = None
    limits = growth_limits(observable, radii, spec, R_cond, budget)
    fn = partial(_growth_replica, seed=seed, p=p, spec=spec, observable=observable, radii=radii,
                 limits=limits, R_cond=R_cond, max_attempts=max_attempts)
    res = np.asarray(replica_map(fn, n, workers), dtype=float)
    flag_rate = float(res[:, -2].mean())
    points = []
    for j, r in enumerate(radii):
        m, ci = mean_ci(res[:, j])
        points.append(ScalingPoint(r, m, ci, n, flag_rate))
    est = ScalingEstimate(points, meta={
        "estimator": "growth_curves", "observable": observable, "measure": measure, "p": p,
        "seed": seed, "R_view": limits.R, "R_cond": R_cond, "flag_rate": flag_rate,
        "mean_attempts": float(res[:, -1].mean()),
    })
    return _fit_into(est, max_flag_rate if measure == "plain" else None)


# -- tail curves ----------------------------------------------------------------

TAIL_TARGETS = ("B_upper", "B_lower", "Xrr_lower", "short_arm")


def _tail_replica(i, *, seed, p, spec, target, r, limits, R_cond, max_attempts):
    if R_cond is None:
        view = _plain_view(i, seed, p, spec, limits)
    else:
        view, _ = _iic_view(i, seed, p, spec, limits, R_cond, max_attempts)
    if target in ("B_upper", "B_lower"):
        return float((view.dist <= r).sum())
    if target == "Xrr_lower":
        return float(len(restricted_component(view, r)))
    return float(boundary_distance(view, r))


def tail_curve(target: str, r: int, grid: Sequence[float], n: int, spec: LatticeSpec, p: float,
               seed: int = 0, measure: str = "iic", R_cond: Optional[int] = None,
               max_attempts: int = 10**6, workers: int | None = None) -> TailCurve:
    """Empirical tail probabilities at radius ``r``.

    ``B_upper``: ``P(|B_r| >= lam r^2)``; ``B_lower``: ``P(|B_r| <= r^2/lam)``;
    ``Xrr_lower``: ``P(|X_{r,r}| <= r^4/lam)``; ``short_arm``:
    ``P(0 reaches dQ_r within floor(eps r^2) steps)``.  Grid values are
    ``lam > 1`` or ``eps > 0``.  Each replica is sampled once and thresholded
    at every grid value, so the curves are exact empirical survival functions.
    """
    if target not in TAIL_TARGETS:
        raise EstimationError(f"unknown tail target {target!r}; expected one of {TAIL_TARGETS}")
    grid = [float(g) for g in grid]
    if target == "short_arm":
        if any(g <= 0 for g in grid):
            raise EstimationError("eps values must be positive")
    elif any(g <= 1 for g in grid):
        raise EstimationError("lambda values must exceed 1")
    if measure == "iic":
        R_cond = 2 * r if R_cond is None else int(R_cond)
        if R_cond < r:
            raise EstimationError("conditioning radius must be at least r")
        limits = ExploreLimits(max(R_cond, r))
    elif measure == "plain":
        R_cond = None
        limits = ExploreLimits(r)
    else:
        raise EstimationError(f"unknown measure {measure!r}")
    fn = partial(_tail_replica, seed=seed, p=p, spec=spec, target=target, r=r, limits=limits,
                 R_cond=R_cond, max_attempts=max_attempts)
    vals = np.asarray(replica_map(fn, n, workers), dtype=float)
    probs, cis = [], []
    for g in grid:
        if target == "B_upper":
            hit = vals >= g * r * r
        elif target == "B_lower":
            hit = vals <= r * r / g
        elif target == "Xrr_lower":
            hit = vals <= r ** 4 / g
        else:
            hit = vals <= math.floor(g * r * r)
        k = int(hit.sum())
        probs.append(k / n)
        cis.append(proportion_ci(k, n))
    return TailCurve(target, r, grid, probs, cis, n, meta={
        "estimator": "tail_curve", "measure": measure, "p": p, "seed": seed, "R_cond": R_cond})


# -- dyadic diagnostic ------------------------------------------------------------

def dyadic_exponent(mu: float) -> float:
    return (1 + mu / 2) / (1 + mu)


def dyadic_lambda(k: int, mu: float) -> float:
    """``lambda_k = 2 ** (k ** ((1 + mu/2) / (1 + mu)))``."""
    return 2.0 ** (k ** dyadic_exponent(mu))


def dyadic_eps(k: int, mu: float) -> float:
    """``eps_k = log_{r_k}(lambda_k) = k ** ((1 + mu/2) / (1 + mu) - 1)``."""
    return k ** (dyadic_exponent(mu) - 1)


@dataclass(frozen=True)
class DyadicEntry:
    k: int
    r_k: int
    lambda_k: float
    eps_k: float
    Y: float
    flagged: bool


@dataclass
class DyadicDiagnostic:
    mu: float
    exponent: float
    side: str
    entries: list

    @property
    def flag_count(self) -> int:
        return sum(e.flagged for e in self.entries)

    @property
    def flagged_ks(self) -> list:
        return [e.k for e in self.entries if e.flagged]


def dyadic_diagnostic(z_values: Sequence[float], exponent: float, side: str = "upper",
                      mu: float = 1.0, ks: Optional[Sequence[int]] = None,
                      log2_z: bool = False) -> DyadicDiagnostic:
    """Flag dyadic scales where ``Y_{r_k} = log_{r_k} Z_{r_k}`` strays by ``eps_k``.

    ``z_values[j]`` is ``Z`` at ``r_k = 2**k`` with ``k = ks[j]`` (default
    ``k = 1, 2, ...``).  Upper side flags ``Y >= exponent + eps_k``; lower side
    flags ``Y <= exponent - eps_k``.  A summable flag probability over ``k``
    is what makes the limit statement hold almost surely, so a flag count that
    keeps growing with ``k`` is evidence against the exponent.  Pass
    ``log2_z=True`` to supply ``log2 Z`` directly (avoids overflow).
    """
    if side not in ("upper", "lower"):
        raise EstimationError(f"side must be 'upper' or 'lower', got {side!r}")
    if not mu > 0:
        raise EstimationError("mu must be positive")
    z = np.asarray(z_values, dtype=float)
    ks = list(range(1, len(z) + 1)) if ks is None else [int(k) for k in ks]
    if len(ks) != len(z) or not ks:
        raise EstimationError("need one Z value per k (at least one)")
    if any(k < 1 for k in ks):
        raise EstimationError("k must be >= 1")
    if not log2_z and np.any(z <= 0):
        raise EstimationError("Z values must be positive")
    entries = []
    for k, zv in zip(ks, z):
        y = (float(zv) if log2_z else math.log2(zv)) / k
        eps = dyadic_eps(k, mu)
        flagged = y >= exponent + eps if side == "upper" else y <= exponent - eps
        entries.append(DyadicEntry(k, 2 ** k, dyadic_lambda(k, mu), eps, y, bool(flagged)))
    return DyadicDiagnostic(mu, float(exponent), side, entries)


def bridging_violations(z_series: Sequence[float]) -> list[int]:
    """Radii where the dyadic bridging bounds fail for ``Z_r`` given at ``r = 1..N``.

    For ``2^k <= r <= 2^(k+1)`` with ``k >= 1`` and a non-decreasing series
    with ``Z >= 1``: ``Y_r <= Y_{2^(k+1)} (k+1)/k`` and ``Y_r >= Y_{2^k} k/(k+1)``.
    """
    z = np.asarray(z_series, dtype=float)
    bad = []
    N = len(z)
    Y = lambda r: math.log(z[r - 1]) / math.log(r)
    k = 1
    while 2 ** (k + 1) <= N:
        lo, hi = 2 ** k, 2 ** (k + 1)
        up, down = Y(hi) * (k + 1) / k, Y(lo) * k / (k + 1)
        for r in range(lo, hi + 1):
            y = Y(r)
            if y > up * (1 + 1e-12) + 1e-12 or y < down * (1 - 1e-12) - 1e-12:
                bad.append(r)
        k += 1
    return bad


def _dyadic_replica(i, *, seed, p, spec, observable, radii, limits, R_cond, max_attempts):
    return _growth_replica(i, seed=seed, p=p, spec=spec, observable=observable, radii=radii,
                           limits=limits, R_cond=R_cond, max_attempts=max_attempts)[:-2]


@dataclass
class DimensionStudy:
    """Fit plus per-scale dyadic flag rates over many replicas."""

    estimate: ScalingEstimate
    ks: list
    lambda_k: list
    eps_k: list
    mean_Y: list
    upper_flag_rate: list
    lower_flag_rate: list
    exponent: float
    mu: float


def dimension_study(observable: str, kmax: int, n: int, spec: LatticeSpec, p: float,
                    exponent: float, seed: int = 0, measure: str = "iic", mu: float = 1.0,
                    kmin: int = 1, R_cond: Optional[int] = None, max_attempts: int = 10**6,
                    workers: int | None = None) -> DimensionStudy:
    """Sample ``Z_{2^k}`` per replica, fit the slope and run the dyadic diagnostic on each replica."""
    ks = list(range(kmin, kmax + 1))
    radii = [2 ** k for k in ks]
    est = growth_curves(observable, radii, n, spec, p, seed, measure, R_cond,
                        max_attempts=max_attempts, workers=workers)
    R_cond = est.meta["R_cond"]
    limits = growth_limits(observable, radii, spec, R_cond)
    fn = partial(_dyadic_replica, seed=seed, p=p, spec=spec, observable=observable, radii=radii,
                 limits=limits, R_cond=R_cond, max_attempts=max_attempts)
    z = np.asarray(replica_map(fn, n, workers), dtype=float)
    up = np.zeros(len(ks))
    down = np.zeros(len(ks))
    ys = np.zeros(len(ks))
    for row in z:
        if np.any(row <= 0):
            down += 1
            continue
        for side, acc in (("upper", up), ("lower", down)):
            diag = dyadic_diagnostic(row, exponent, side, mu, ks)
            acc += [e.flagged for e in diag.entries]
        ys += np.log2(row) / np.array(ks)
    return DimensionStudy(est, ks, [dyadic_lambda(k, mu) for k in ks], [dyadic_eps(k, mu) for k in ks],
                          list(ys / n), list(up / n), list(down / n), float(exponent), float(mu))


# -- spectral dimension ---------------------------------------------------------------

@dataclass
class SpectralEstimate:
    r: list
    return_prob: list
    slope: float
    slope_stderr: float
    d_s: float
    n_walks: int


def _csr(view: ClusterView):
    a = view.adjacency()
    return a.indptr.astype(np.int64), a.indices.astype(np.int64)


def return_probabilities(views: Sequence[ClusterView] | ClusterView, radii: Sequence[int],
                         n_walks: int, seed: int = 0) -> np.ndarray:
    """Monte Carlo ``p_{2r}(0, 0)`` for simple random walks from the origin.

    Walks are split evenly across ``views`` (an annealed average).  A walker
    on an isolated vertex stays put.
    """
    if isinstance(views, ClusterView):
        views = [views]
    if not views:
        raise EstimationError("need at least one cluster")
    radii = sorted(int(r) for r in radii)
    if radii[0] < 1:
        raise EstimationError("walk radii must be >= 1")
    rng = np.random.Generator(np.random.PCG64(seed))
    counts = np.zeros(len(radii))
    per = np.full(len(views), n_walks // len(views))
    per[: n_walks % len(views)] += 1
    targets = {2 * r: j for j, r in enumerate(radii)}
    for view, m in zip(views, per):
        if m == 0:
            continue
        if view.size == 0:
            raise EstimationError("empty cluster")
        indptr, indices = _csr(view)
        deg = np.diff(indptr)
        pos = np.zeros(m, dtype=np.int64)
        for t in range(1, 2 * radii[-1] + 1):
            dp = deg[pos]
            move = dp > 0
            u = rng.random(m)
            choice = np.minimum((u * dp).astype(np.int64), np.maximum(dp - 1, 0))
            pos = np.where(move, indices[np.minimum(indptr[pos] + choice, len(indices) - 1)]
                           if len(indices) else pos, pos)
            j = targets.get(t)
            if j is not None:
                counts[j] += np.count_nonzero(pos == 0)
    return counts / n_walks


def spectral_dimension(views: Sequence[ClusterView] | ClusterView, walk_steps: int, n_walks: int,
                       seed: int = 0, r_min: int = 1) -> SpectralEstimate:
    """``d_s = -2 * slope`` of ``log p_{2r}(0,0)`` against ``log r`` on a dyadic grid.

    ``walk_steps`` is the largest walk length ``2 r``; the grid is
    ``r = r_min, 2 r_min, 4 r_min, ... <= walk_steps / 2``.
    """
    if walk_steps < 2 * r_min:
        raise EstimationError("walk_steps must be at least 2 * r_min")
    radii = []
    r = max(1, int(r_min))
    while 2 * r <= walk_steps:
        radii.append(r)
        r *= 2
    probs = return_probabilities(views, radii, n_walks, seed)
    pts = [(r, q) for r, q in zip(radii, probs) if q > 0]
    if len(pts) < 2:
        raise EstimationError("too few positive return probabilities to fit")
    slope, err = fit_scaling(pts)
    return SpectralEstimate(radii, [float(q) for q in probs], slope, err, -2.0 * slope + 0.0, n_walks)


# -- critical point -----------------------------------------------------------------

class PcNotConverged(RuntimeError):
    pass


@dataclass
class PcEstimate:
    p_hat: float
    uncertainty: float
    target_level: float
    history: list
    meta: dict = field(default_factory=dict)


def _arm_ratios(p, r, n, spec, seed, budget, workers):
    shells, flags = arm_shells(p, 4 * r, n, spec, seed, budget, workers)
    # an exhausted budget counts as reaching the boundary
    shells = np.where(flags, 4 * r, shells)
    P = [float((shells >= k).mean()) for k in (r, 2 * r, 4 * r)]
    if P[1] == 0.0:
        return -1.0, 0.0, 0.0
    rho_r, rho_2r = P[1] / P[0], P[2] / P[1]
    return rho_2r - rho_r, rho_r, rho_2r


def estimate_pc(spec: LatticeSpec, r_probe: int = 4, n: int = 10000, tolerance: float = 1e-3,
                seed: int = 0, max_doublings: int = 4, lo: float = 0.0, hi: float = 1.0,
                budget: Optional[int] = 10**6, workers: int | None = None) -> PcEstimate:
    """Locate ``p_c`` by bisection on finite-size arm probabilities.

    With ``rho_r(p) = P_p(0 <-> dQ_{2r}) / P_p(0 <-> dQ_r)``, the curves
    ``rho_r`` and ``rho_{2r}`` cross where the arm probability decays
    scale-invariantly; below ``p_c`` the larger scale decays faster, above it
    slower.  The crossing ``p`` is found by bisection (all ``p`` share the
    same replica keys, so the arm indicators are monotone in ``p``), the
    common value of ``rho`` there is the target level, and ``r`` is doubled
    until successive crossings move by less than ``tolerance``.  The last
    move is reported as the uncertainty.
    """
    if r_probe < 4:
        raise EstimationError("r_probe must be >= 4")
    if not 0 <= lo < hi <= 1:
        raise EstimationError("need 0 <= lo < hi <= 1")
    history = []
    r = int(r_probe)
    prev = None
    for _ in range(max_doublings + 1):
        a, b = lo, hi
        while b - a > tolerance / 8:
            mid = 0.5 * (a + b)
            g, _, _ = _arm_ratios(mid, r, n, spec, seed, budget, workers)
            if g < 0:
                a = mid
            else:
                b = mid
        p_hat = 0.5 * (a + b)
        _, rho_r, rho_2r = _arm_ratios(p_hat, r, n, spec, seed, budget, workers)
        history.append((r, p_hat, 0.5 * (rho_r + rho_2r)))
        if prev is not None and abs(p_hat - prev) < tolerance:
            return PcEstimate(p_hat, abs(p_hat - prev), history[-1][2], history,
                              meta={"n": n, "seed": seed, "r_final": r, "tolerance": tolerance})
        prev = p_hat
        r *= 2
    raise PcNotConverged(f"p_c estimate still drifting after {max_doublings} doublings: {history}")
