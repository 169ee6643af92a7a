"""Command-line experiment runner.

Every subcommand writes ``<out>/<command>.csv`` and appends one JSON record
to ``<out>/manifest.jsonl``.  Data files depend only on the configuration and
seed, never on ``--workers``.  Exit status: 0 success, 1 invalid
configuration (detected before any sampling), 2 runtime failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import re
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .configuration import RandomEdges, derive_replica_key
from .estimators import (
    OBSERVABLES,
    TAIL_TARGETS,
    PcNotConverged,
    dimension_study,
    estimate_pc,
    growth_curves,
    one_arm,
    proportion_ci,
    spectral_dimension,
    tail_curve,
    two_point,
)
from .explorer import BACKEND, ExploreLimits, explore, observables
from .iic import (
    ArmCondition,
    ConditioningFailed,
    PointCondition,
    ball_at_least,
    cylinder_convergence,
    edge_open_event,
    sample_conditioned,
)
from .lattice import LatticeError, LatticeSpec, shell_index
from .oracle import OracleError, enumerate_measure, read_instance, unit_square

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


# -- parsing helpers ------------------------------------------------------------

def _ints(text: str, name: str) -> list[int]:
    try:
        vals = [int(t) for t in text.replace(" ", "").split(",") if t]
    except ValueError:
        raise ConfigError(f"{name} must be a comma-separated list of integers, got {text!r}")
    if not vals:
        raise ConfigError(f"{name} is empty")
    return vals


def _floats(text: str, name: str) -> list[float]:
    try:
        vals = [float(t) for t in text.replace(" ", "").split(",") if t]
    except ValueError:
        raise ConfigError(f"{name} must be a comma-separated list of numbers, got {text!r}")
    if not vals:
        raise ConfigError(f"{name} is empty")
    return vals


def _vertex(text: str, d: int) -> tuple:
    v = tuple(_ints(text.strip().strip("()"), "vertex"))
    if len(v) != d:
        raise ConfigError(f"vertex {v} does not have dimension {d}")
    return v


def _vertices(text: str, d: int) -> list[tuple]:
    return [_vertex(t, d) for t in text.split(";") if t.strip()]


@dataclass
class ExperimentConfig:
    command: str
    d: int
    model: str
    L: int
    cube_norm: str
    p: Optional[float]
    auto_pc: bool
    mode: str
    n: int
    seed: int
    out: str
    radii: list = field(default_factory=list)
    grid: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    @property
    def spec(self) -> LatticeSpec:
        return LatticeSpec(self.d, self.model, self.L, self.cube_norm)


_MODES = {
    "sample": ("plain", "iic-arm", "iic-point"),
    "arm": ("plain",),
    "growth": ("plain", "iic-arm"),
    "tails": ("iic-arm", "plain"),
    "dimension": ("iic-arm", "plain"),
    "iic": ("iic-arm", "iic-point"),
    "spectral": ("iic-arm", "plain"),
    "two-point": ("plain", "iic-arm"),
    "oracle": ("plain",),
    "pc": ("plain",),
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    g = common.add_argument_group("lattice")
    g.add_argument("--dim", type=int, default=2, help="lattice dimension d")
    g.add_argument("--model", default="nn", help="bond model: nn or spread")
    g.add_argument("--range", dest="L", type=int, default=1, help="spread-out range L")
    g.add_argument("--norm", default="l2", help="norm defining the cubes Q_r: l2, l1 or linf")
    pg = common.add_mutually_exclusive_group()
    pg.add_argument("--p", type=float, help="bond density")
    pg.add_argument("--auto-pc", action="store_true", help="estimate p_c first and run there")
    common.add_argument("--radii", help="comma-separated radii")
    common.add_argument("--grid", help="comma-separated parameter grid (lambda or eps)")
    common.add_argument("--n", type=int, default=1000, help="number of replicas")
    common.add_argument("--seed", type=int, default=0, help="master seed")
    common.add_argument("--mode", help="measure: plain, iic-arm or iic-point")
    common.add_argument("--out", default=".", help="output directory")
    common.add_argument("--workers", type=int, default=None, help="worker processes (never changes output)")
    common.add_argument("--cond-radius", type=int, help="conditioning radius for iic-arm")
    common.add_argument("--point", help="conditioning point for iic-point, e.g. 4,0")
    common.add_argument("--budget", type=int, help="vertex budget per exploration")
    common.add_argument("--max-attempts", type=int, default=10**6)
    common.add_argument("--pc-n", type=int, default=10000, help="replicas per p for --auto-pc")
    common.add_argument("--pc-tolerance", type=float, default=1e-3)

    parser = _Parser(prog="percolab", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"percolab {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="command", parser_class=_Parser)
    sub.required = True

    s = sub.add_parser("oracle", parents=[common], help="exact values by enumeration on a tiny instance")
    s.add_argument("--instance", help="instance file (default: the unit square)")
    s.add_argument("--target", default="connect", choices=["connect", "arm", "X_r", "X_rr", "B_r"])
    s.add_argument("--points", help="';'-separated target vertices for --target connect")

    s = sub.add_parser("sample", parents=[common], help="per-replica observables")
    s.add_argument("--start", type=int, default=0, help="first replica index")

    sub.add_parser("arm", parents=[common], help="one-arm probabilities")

    s = sub.add_parser("growth", parents=[common], help="growth curves and slope")
    s.add_argument("--observable", default="X_r", choices=list(OBSERVABLES))

    s = sub.add_parser("tails", parents=[common], help="tail curve at one radius")
    s.add_argument("--target", default="B_upper", choices=list(TAIL_TARGETS))

    s = sub.add_parser("dimension", parents=[common], help="slope fit plus dyadic diagnostic")
    s.add_argument("--observable", default="X_r", choices=list(OBSERVABLES))
    s.add_argument("--exponent", type=float, required=True)
    s.add_argument("--mu", type=float, default=1.0)

    s = sub.add_parser("iic", parents=[common], help="cylinder-event convergence under conditioning")
    s.add_argument("--event", default="edge:0", help="sure | edge:<i> (bond 0 -> e_i) | ball:<r>:<k>")
    s.add_argument("--instance", help="restrict randomness to the bonds of an instance file")

    s = sub.add_parser("spectral", parents=[common], help="random-walk return probabilities")
    s.add_argument("--walk-steps", type=int, default=256)
    s.add_argument("--walks", type=int, default=20000)

    s = sub.add_parser("pc", parents=[common], help="locate p_c")
    s.add_argument("--tolerance", type=float, default=1e-3)
    s.add_argument("--max-doublings", type=int, default=4)

    s = sub.add_parser("two-point", parents=[common], help="two-point function")
    s.add_argument("--points", required=True, help="';'-separated target vertices")
    return parser


def _check(cond: bool, message: str) -> None:
    if not cond:
        raise ConfigError(message)


def validate(args: argparse.Namespace) -> ExperimentConfig:
    """Turn parsed arguments into a checked config; raise ConfigError on any violation."""
    cmd = args.command
    try:
        spec = LatticeSpec(args.dim, args.model, args.L, args.norm)
    except LatticeError as exc:
        raise ConfigError(str(exc))
    modes = _MODES[cmd]
    mode = args.mode or modes[0]
    if mode in ("arm", "point"):
        mode = "iic-" + mode
    _check(mode in modes, f"--mode {mode!r} is not valid for {cmd}; choose from {modes}")
    _check(args.n >= 1, "--n must be >= 1")
    _check(args.workers is None or args.workers >= 1, "--workers must be >= 1")
    _check(args.max_attempts >= 1, "--max-attempts must be >= 1")
    _check(args.budget is None or args.budget >= 1, "--budget must be >= 1")
    if cmd == "pc":
        _check(not args.auto_pc and args.p is None, "pc takes no --p or --auto-pc")
    elif cmd == "oracle":
        _check(args.p is not None, "oracle needs an explicit --p")
    else:
        _check(args.p is not None or args.auto_pc, f"{cmd} needs --p or --auto-pc")
    if args.p is not None:
        _check(0.0 <= args.p <= 1.0, f"--p must lie in [0, 1], got {args.p}")

    radii = _ints(args.radii, "--radii") if args.radii else []
    grid = _floats(args.grid, "--grid") if args.grid else []
    _check(all(r >= 1 for r in radii), "--radii must be positive")
    _check(all(b > a for a, b in zip(radii, radii[1:])), "--radii must be strictly increasing")
    extra: dict = {}
    if args.cond_radius is not None:
        _check(args.cond_radius >= 1, "--cond-radius must be >= 1")

    if cmd == "oracle":
        try:
            inst = read_instance(args.instance, args.p, model=args.model, L=args.L, cube_norm=args.norm) \
                if args.instance else unit_square(args.p)
        except (OSError, OracleError, LatticeError) as exc:
            raise ConfigError(f"instance: {exc}")
        spec = inst.spec
        extra["instance"] = args.instance or "unit-square"
        extra["target"] = args.target
        if args.target == "connect":
            pts = _vertices(args.points, spec.d) if args.points else [v for v in inst.vertices if any(v)]
            _check(all(any(x) for x in pts), "connection targets must differ from the origin")
            extra["points"] = pts
        else:
            radii = radii or list(range(1, inst.radius + 1))
            _check(radii[-1] <= inst.radius, f"radii exceed the instance radius {inst.radius}")
        extra["_inst"] = inst
    elif cmd in ("sample", "arm", "growth"):
        _check(bool(radii), f"{cmd} needs --radii")
        if cmd == "growth":
            extra["observable"] = args.observable
    elif cmd == "tails":
        _check(len(radii) == 1, "tails needs exactly one radius in --radii")
        _check(bool(grid), "tails needs --grid")
        if args.target == "short_arm":
            _check(all(g > 0 for g in grid), "eps grid values must be positive")
        else:
            _check(all(g > 1 for g in grid), "lambda grid values must exceed 1")
        extra["target"] = args.target
    elif cmd == "dimension":
        radii = radii or [2, 4, 8, 16]
        ks = [int(round(math.log2(r))) for r in radii]
        _check(all(2 ** k == r and k >= 1 for k, r in zip(ks, radii)),
               "dimension radii must be powers of two >= 2")
        _check(args.mu > 0, "--mu must be positive")
        extra.update(observable=args.observable, exponent=args.exponent, mu=args.mu, ks=ks)
    elif cmd == "iic":
        _check(bool(radii), "iic needs --radii")
        extra["event"] = args.event
        extra["_event"] = _parse_event(args.event, spec)
        if args.instance:
            try:
                inst = read_instance(args.instance, 0.5, model=args.model, L=args.L, cube_norm=args.norm)
            except (OSError, OracleError, LatticeError) as exc:
                raise ConfigError(f"instance: {exc}")
            _check(inst.spec == spec, "instance lattice does not match --dim/--model/--norm")
            extra["instance"] = args.instance
            extra["_support"] = inst.support
        if mode == "iic-point":
            direction = _vertex(args.point, spec.d) if args.point else (1,) + (0,) * (spec.d - 1)
            _check(any(direction), "--point must differ from the origin")
            extra["direction"] = direction
    elif cmd == "spectral":
        _check(args.walk_steps >= 2, "--walk-steps must be >= 2")
        _check(args.walks >= 1, "--walks must be >= 1")
        extra.update(walk_steps=args.walk_steps, walks=args.walks, r_min=radii[0] if radii else 1)
    elif cmd == "pc":
        r_probe = radii[0] if radii else 4
        _check(r_probe >= 4, "pc needs a probe radius >= 4")
        _check(args.tolerance > 0, "--tolerance must be positive")
        _check(args.max_doublings >= 1, "--max-doublings must be >= 1")
        extra.update(r_probe=r_probe, tolerance=args.tolerance, max_doublings=args.max_doublings)
    elif cmd == "two-point":
        pts = _vertices(args.points, spec.d)
        _check(bool(pts) and all(any(x) for x in pts), "--points must be non-empty and exclude the origin")
        extra["points"] = pts

    if mode == "iic-point" and cmd == "sample":
        _check(args.point is not None, "iic-point sampling needs --point")
        extra["point"] = _vertex(args.point, spec.d)
    if args.auto_pc:
        _check(args.pc_n >= 1 and args.pc_tolerance > 0, "--pc-n and --pc-tolerance must be positive")
    extra.update(cond_radius=args.cond_radius, budget=args.budget, max_attempts=args.max_attempts,
                 workers=args.workers, pc_n=args.pc_n, pc_tolerance=args.pc_tolerance)
    if cmd == "sample":
        _check(args.start >= 0, "--start must be >= 0")
        extra["start"] = args.start
    return ExperimentConfig(cmd, spec.d, spec.model, spec.L, spec.cube_norm, args.p, args.auto_pc, mode,
                            args.n, args.seed, args.out, radii, grid, extra)


def _parse_event(text: str, spec: LatticeSpec):
    if text == "sure":
        return _Sure()
    m = re.fullmatch(r"edge:(\d+)", text)
    if m:
        i = int(m.group(1))
        _check(i < spec.d, f"edge direction {i} out of range for d={spec.d}")
        e = [0] * spec.d
        e[i] = 1
        return edge_open_event(((0,) * spec.d, tuple(e)))
    m = re.fullmatch(r"ball:(\d+):(\d+)", text)
    if m:
        return ball_at_least(int(m.group(1)), int(m.group(2)))
    raise ConfigError(f"unknown event {text!r}; use sure, edge:<i> or ball:<r>:<k>")


class _Sure:
    def __call__(self, view) -> bool:
        return True


# -- runners --------------------------------------------------------------------

def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])


EST_HEADER = ("r_or_param", "mean", "ci", "n")


def _cond_radius(cfg: ExperimentConfig) -> int:
    return cfg.extra["cond_radius"] or 2 * max(cfg.radii)


def _run_sample(cfg, p, out):
    spec = cfg.spec
    start = cfg.extra["start"]
    R = max(2 * max(cfg.radii), cfg.extra["cond_radius"] or 0)
    if cfg.mode == "iic-point":
        R = max(R, shell_index(cfg.extra["point"], spec))
    limits = ExploreLimits(R, vertex_budget=cfg.extra["budget"])
    rows, failures = [], []
    for i in range(start, start + cfg.n):
        attempts = 1
        try:
            if cfg.mode == "plain":
                view = explore((0,) * spec.d, RandomEdges(derive_replica_key(cfg.seed, i), p), spec, limits)
            else:
                cond = ArmCondition(_cond_radius(cfg)) if cfg.mode == "iic-arm" else PointCondition(cfg.extra["point"])
                s = sample_conditioned(cond, p, cfg.seed, i, spec, limits, cfg.extra["max_attempts"])
                view, attempts = s.view, s.attempts
        except ConditioningFailed as exc:
            failures.append(i)
            for r in cfg.radii:
                rows.append((i, r, "", "", "", "", "", "", "", exc.attempts))
            continue
        for r in cfg.radii:
            o = observables(view, r)
            rows.append((i, r, o.x_r_lower, o.x_rr, o.b_r, int(o.arm_hit), int(o.x_r_exact),
                         int(o.x_rr_exact), int(o.b_r_exact), attempts))
    _write_csv(out, ("replica", "r", "x_r_lower", "x_rr", "b_r", "arm_hit", "x_r_exact", "x_rr_exact",
                     "b_r_exact", "attempts"), rows)
    return {"R_view": R, "failed_replicas": failures}


def _estimate_summary(est) -> dict:
    return {"slope": est.slope, "slope_stderr": est.slope_stderr, "prefactor": est.prefactor,
            "excluded": est.excluded, "flag_rates": {str(pt.r): pt.flag_rate for pt in est.points},
            **{k: v for k, v in est.meta.items() if k not in ("p", "seed")}}


def _run(cfg: ExperimentConfig, p: Optional[float], outdir: Path) -> tuple[list, dict]:
    spec, ex, w = cfg.spec, cfg.extra, cfg.extra["workers"]
    out = outdir / f"{cfg.command}.csv"
    files = [out.name]
    iic = cfg.mode == "iic-arm"
    if cfg.command == "oracle":
        inst = ex["_inst"]
        rows = []
        configs = 2 ** len(inst.edges)
        if ex["target"] == "connect":
            for x in ex["points"]:
                val = enumerate_measure(inst, lambda v, x=x: x in v)
                rows.append(("(" + ",".join(map(str, x)) + ")", val, 0.0, configs))
        else:
            for r in cfg.radii:
                fn = {"arm": lambda v, r=r: v.max_shell >= r,
                      "X_r": lambda v, r=r: observables(v, r).x_r_lower,
                      "X_rr": lambda v, r=r: observables(v, r).x_rr,
                      "B_r": lambda v, r=r: observables(v, r).b_r}[ex["target"]]
                rows.append((r, enumerate_measure(inst, fn), 0.0, configs))
        _write_csv(out, EST_HEADER, rows)
        return files, {"configurations": configs}
    if cfg.command == "sample":
        return files, _run_sample(cfg, p, out)
    if cfg.command == "arm":
        est = one_arm(p, cfg.radii, cfg.n, spec, cfg.seed, ex["budget"], w)
    elif cfg.command == "two-point":
        est = two_point(p, ex["points"], cfg.n, spec, cfg.seed, iic_radius=ex["cond_radius"] or (
            2 * max(shell_index(x, spec) for x in ex["points"]) if iic else None),
            max_attempts=ex["max_attempts"], workers=w)
    elif cfg.command == "growth":
        est = growth_curves(ex["observable"], cfg.radii, cfg.n, spec, p, cfg.seed,
                            "iic" if iic else "plain", ex["cond_radius"], ex["budget"], ex["max_attempts"],
                            workers=w)
    elif cfg.command == "tails":
        tc = tail_curve(ex["target"], cfg.radii[0], cfg.grid, cfg.n, spec, p, cfg.seed,
                        "iic" if iic else "plain", ex["cond_radius"], ex["max_attempts"], w)
        _write_csv(out, EST_HEADER, tc.rows())
        return files, {"R_cond": tc.meta["R_cond"], "target": tc.target}
    elif cfg.command == "dimension":
        ks = ex["ks"]
        st = dimension_study(ex["observable"], ks[-1], cfg.n, spec, p, ex["exponent"], cfg.seed,
                             "iic" if iic else "plain", ex["mu"], ks[0], ex["cond_radius"],
                             ex["max_attempts"], w)
        _write_csv(out, EST_HEADER, st.estimate.rows())
        dy = outdir / "dyadic.csv"
        _write_csv(dy, ("k", "r_k", "lambda_k", "eps_k", "mean_Y", "upper_flag_rate", "lower_flag_rate"),
                   [(k, 2 ** k, lam, eps, y, u, lo) for k, lam, eps, y, u, lo in
                    zip(st.ks, st.lambda_k, st.eps_k, st.mean_Y, st.upper_flag_rate, st.lower_flag_rate)])
        return files + [dy.name], _estimate_summary(st.estimate)
    elif cfg.command == "iic":
        rows, info = [], {"cells": []}
        for R in cfg.radii:
            try:
                (row,) = cylinder_convergence(ex["_event"], p, [R], cfg.n, spec, cfg.seed,
                                              "arm" if iic else "point", ex.get("direction"),
                                              ex["max_attempts"], ex.get("_support"), w)
            except ConditioningFailed as exc:
                rows.append((R, "", "", cfg.n))
                info["cells"].append({"R": R, "failed": True, "attempts": exc.attempts})
                continue
            rows.append((R, row.estimate, row.ci, row.n))
            info["cells"].append({"R": R, "mean_attempts": row.mean_attempts})
        _write_csv(out, EST_HEADER, rows)
        return files, info
    elif cfg.command == "spectral":
        if iic:
            R = ex["cond_radius"] or 32
            views = [sample_conditioned(ArmCondition(R), p, cfg.seed, i, spec, ExploreLimits(R),
                                        ex["max_attempts"]).view for i in range(cfg.n)]
        else:
            R = ex["walk_steps"]
            views = [explore((0,) * spec.d, RandomEdges(derive_replica_key(cfg.seed, i), p), spec,
                             ExploreLimits(R, vertex_budget=ex["budget"])) for i in range(cfg.n)]
        sp = spectral_dimension(views, ex["walk_steps"], ex["walks"], cfg.seed, ex["r_min"])
        rows = [(r, q, proportion_ci(int(round(q * sp.n_walks)), sp.n_walks), sp.n_walks)
                for r, q in zip(sp.r, sp.return_prob)]
        _write_csv(out, EST_HEADER, rows)
        return files, {"d_s": sp.d_s, "slope": sp.slope, "slope_stderr": sp.slope_stderr, "R_view": R,
                       "clusters": cfg.n}
    elif cfg.command == "pc":
        pc = estimate_pc(spec, ex["r_probe"], cfg.n, ex["tolerance"], cfg.seed, ex["max_doublings"],
                         budget=ex["budget"] or 10**6, workers=w)
        rows, prev = [], None
        for r, ph, _lvl in pc.history:
            rows.append((r, ph, math.nan if prev is None else abs(ph - prev), cfg.n))
            prev = ph
        _write_csv(out, EST_HEADER, rows)
        return files, {"p_hat": pc.p_hat, "uncertainty": pc.uncertainty, "target_level": pc.target_level,
                       "history": pc.history}
    _write_csv(out, EST_HEADER, est.rows())
    return files, _estimate_summary(est)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items() if not str(k).startswith("_")}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    return obj


def _manifest(outdir: Path, record: dict) -> None:
    with open(outdir / "manifest.jsonl", "a") as fh:
        fh.write(json.dumps(_jsonable(record), sort_keys=True) + "\n")


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = validate(args)
        outdir = Path(cfg.out)
        outdir.mkdir(parents=True, exist_ok=True)
    except (ConfigError, OSError) as exc:
        print(f"percolab: config error: {exc}", file=sys.stderr)
        return 1
    record = {"schema_version": SCHEMA_VERSION, "version": __version__, "backend": BACKEND,
              "config": asdict(cfg), "seed": cfg.seed,
              "replica_keys": "derive_replica_key(seed, i); attempt a of replica i uses "
                              "derive_replica_key(seed, i * 2**32 + a)"}
    try:
        p = cfg.p
        if cfg.auto_pc:
            pc = estimate_pc(cfg.spec, 4, cfg.extra["pc_n"], cfg.extra["pc_tolerance"], cfg.seed,
                             workers=cfg.extra["workers"])
            p = pc.p_hat
            record["auto_pc"] = {"p_hat": pc.p_hat, "uncertainty": pc.uncertainty,
                                 "target_level": pc.target_level}
        record["p"] = p
        files, info = _run(cfg, p, outdir)
    except (ConditioningFailed, PcNotConverged, OSError, MemoryError, ValueError, RuntimeError) as exc:
        record.update(status="failed", error=f"{type(exc).__name__}: {exc}")
        _manifest(outdir, record)
        print(f"percolab: runtime failure: {exc}", file=sys.stderr)
        return 2
    failed = any(c.get("failed") for c in info.get("cells", ())) or bool(info.get("failed_replicas"))
    record.update(status="partial" if failed else "ok", outputs=files, results=info)
    _manifest(outdir, record)
    print(f"wrote {', '.join(str(outdir / f) for f in files)}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
