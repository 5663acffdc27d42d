"""Compiled vs pure-numpy kernels on the 14x40 tag grid.

Run with ``python3 benchmarks/bench_kernels.py [--repeat N]``.  Prints the
median wall time per call for each kernel and backend, and checks the two
backends agree on the results.
"""
from __future__ import annotations

import argparse
import statistics
import time

import numpy as np

from latentsp import _kernels_py as pure
from latentsp import kernels
from latentsp.graph import grid_graph
from latentsp.inference import counting_arrays


def _time(fn, repeat: int) -> float:
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return statistics.median(times)


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--height", type=int, default=14)
    ap.add_argument("--width", type=int, default=40)
    ap.add_argument("--labels", type=int, default=5)
    args = ap.parse_args()

    if kernels.compiled is None:
        raise SystemExit("compiled extension not available; build with `pip install -e .`")
    g = grid_graph(args.height, args.width, args.labels)
    rng = np.random.default_rng(0)
    node = rng.normal(size=g.node_size)
    fac = rng.normal(size=g.factor_size)
    msgs0 = rng.normal(size=g.message_size)
    cn, cf = counting_arrays(g, 1.0, 1.0)
    order = np.arange(g.num_vars, dtype=np.int64)
    bn, bf = np.empty(g.node_size), np.empty(g.factor_size)

    print(f"grid {args.height}x{args.width}, {args.labels} labels: {g.num_vars} variables, "
          f"{g.num_factors} factors, {g.message_size} message entries")
    print(f"{'kernel':<18}{'compiled ms':>14}{'pure ms':>12}{'speedup':>10}")
    results = {}
    for name in ("sweep", "dual_value", "beliefs", "marginal_residual"):
        row = []
        for k in (kernels.compiled, pure):
            m = msgs0.copy()
            if name == "sweep":
                call = lambda k=k, m=m: k.sweep(g, node, fac, m, 1.0, cn, cf, order)
            elif name == "dual_value":
                call = lambda k=k: k.dual_value(g, node, fac, msgs0, 1.0, cn, cf)
            elif name == "beliefs":
                call = lambda k=k: k.beliefs(g, node, fac, msgs0, 1.0, cn, cf, bn, bf)
            else:
                k.beliefs(g, node, fac, msgs0, 1.0, cn, cf, bn, bf)
                call = lambda k=k: k.marginal_residual(g, bn, bf)
            row.append(_time(call, args.repeat) * 1e3)
        results[name] = row
        print(f"{name:<18}{row[0]:>14.3f}{row[1]:>12.3f}{row[1] / row[0]:>9.1f}x")

    a, b = msgs0.copy(), msgs0.copy()
    kernels.compiled.sweep(g, node, fac, a, 1.0, cn, cf, order)
    pure.sweep(g, node, fac, b, 1.0, cn, cf, order)
    print(f"max |compiled - pure| after one sweep: {np.max(np.abs(a - b)):.2e}")


if __name__ == "__main__":
    main()
