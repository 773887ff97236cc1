"""Compiled versus pure-Python flow kernel on level networks of growing size.

    python3 benchmarks/bench_mcf.py [--reps N] [--partition by_dim]
"""

import argparse
import time

import numpy as np

from hiq.flownet import BACKENDS, solve_min_cost_flow
from hiq.scaling import scaling_instance

SIZES = [(16, 16), (64, 32), (128, 32), (256, 32), (128, 128)]


def time_backend(nets, backend):
    times = []
    for net in nets:
        t0 = time.perf_counter()
        solve_min_cost_flow(net, backend=backend)
        times.append(time.perf_counter() - t0)
    return float(np.median(times))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--reps", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--partition", default="singletons", choices=("singletons", "by_dim"))
    args = ap.parse_args()
    if "compiled" not in BACKENDS:
        print("compiled kernel not built; only the Python kernel is available")
    print(f"{'n_c':>5} {'d':>5} {'python ms':>10} {'compiled ms':>12} {'speedup':>8}")
    for n_c, d in SIZES:
        rng = np.random.default_rng(args.seed)
        nets = [scaling_instance(rng, n_c, d, partition=args.partition) for _ in range(args.reps)]
        # both kernels must agree before their times mean anything
        for net in nets:
            ref = solve_min_cost_flow(net, backend="python")
            if "compiled" in BACKENDS:
                got = solve_min_cost_flow(net, backend="compiled")
                assert got.total_cost == ref.total_cost and (got.codes == ref.codes).all()
        py = time_backend(nets, "python")
        if "compiled" in BACKENDS:
            c = time_backend(nets, "compiled")
            print(f"{n_c:>5} {d:>5} {py * 1e3:>10.2f} {c * 1e3:>12.3f} {py / c:>7.1f}x")
        else:
            print(f"{n_c:>5} {d:>5} {py * 1e3:>10.2f} {'-':>12} {'-':>8}")


if __name__ == "__main__":
    main()
