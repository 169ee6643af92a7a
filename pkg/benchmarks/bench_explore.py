"""Compare the compiled and pure-Python cluster explorers on identical replicas.

Usage::

    python benchmarks/bench_explore.py --dim 7 --p 0.0787 --R 16 --n 200
"""
import argparse
import time

import numpy as np

from percolab.configuration import RandomEdges, derive_replica_key
from percolab.explorer import BACKEND, ExploreLimits, arm_depth, explore
from percolab.lattice import LatticeSpec


def _time(fn, n):
    t = time.perf_counter()
    out = [fn(i) for i in range(n)]
    return time.perf_counter() - t, out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--dim", type=int, default=7)
    ap.add_argument("--p", type=float, default=0.0787)
    ap.add_argument("--R", type=int, default=16)
    ap.add_argument("--n", type=int, default=200)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    if BACKEND != "compiled":
        raise SystemExit("compiled extension not built; run `pip install -e . --no-build-isolation` first")
    spec = LatticeSpec(args.dim)
    o = (0,) * args.dim
    lim = ExploreLimits(args.R)

    def provider(i):
        return RandomEdges(derive_replica_key(args.seed, i), args.p)

    print(f"d={args.dim} p={args.p} R={args.R} n={args.n}")
    for name, run in (
        ("explore", lambda b: lambda i: explore(o, provider(i), spec, lim, backend=b).size),
        ("arm_depth", lambda b: lambda i: arm_depth(o, provider(i), spec, args.R, backend=b).max_shell),
    ):
        tc, vc = _time(run("compiled"), args.n)
        tp, vp = _time(run("python"), args.n)
        same = np.array_equal(vc, vp)
        print(f"{name:10s} compiled {tc:8.3f}s  python {tp:8.3f}s  speedup {tp / max(tc, 1e-12):6.1f}x  "
              f"identical={same}")


if __name__ == "__main__":
    main()
