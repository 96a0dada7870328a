"""Wall time of the compiled and pure-Python stepping loops on the default scenario.

    python3 benchmarks/bench_backends.py [--steps N] [--m 8 16 32] [--repeat R]

Both backends run the same steps from the same history; the script also
reports the largest state difference between them.
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from sddpde import scenario
from sddpde._kernels import available
from sddpde.integrator import solve


def run(sc, m, steps, backend):
    rhs = sc.rhs(m=m)
    phi = sc.initial_history(rhs)
    cfg = sc.solver_config(T=steps * sc.solver.dt, backend=backend)
    t0 = time.perf_counter()
    tr = solve(phi, rhs, cfg)
    return time.perf_counter() - t0, tr.states


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--steps", type=int, default=2000)
    ap.add_argument("--m", type=int, nargs="+", default=[8, 16, 32])
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)

    sc = scenario.load(None)
    backends = available()
    print(f"backends: {', '.join(backends)}; steps={args.steps}, dt={sc.solver.dt}")
    print(f"{'m':>4} " + " ".join(f"{b + ' [s]':>12}" for b in backends) + f" {'speedup':>9} {'max|diff|':>11}")
    for m in args.m:
        times, states = {}, {}
        for b in backends:
            best = np.inf
            for _ in range(args.repeat):
                dt, Y = run(sc, m, args.steps, b)
                best = min(best, dt)
            times[b], states[b] = best, Y
        row = f"{m:>4} " + " ".join(f"{times[b]:>12.4f}" for b in backends)
        if len(backends) == 2:
            diff = float(np.max(np.abs(states["python"] - states["cython"])))
            row += f" {times['python'] / times['cython']:>8.1f}x {diff:>11.2e}"
        print(row)


if __name__ == "__main__":
    main()
