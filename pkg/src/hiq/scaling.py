"""Solve-time sweeps over class count and code width."""

from __future__ import annotations

import time

import numpy as np

from hiq.core import ClassMeanSet, HashConfig, SiblingPartition
from hiq.flownet import build_flow_network, solve_min_cost_flow

PARTITIONS = ("singletons", "by_dim")


def scaling_instance(rng: np.random.Generator, n_c: int, d: int, peak: float = 4.0, weight: float = 0.1,
                     partition: str = "singletons"):
    """A level network resembling trained activations.

    Class means are standard normal plus ``peak`` on one random dimension per
    class. ``singletons`` gives the first-level partition; ``by_dim`` groups
    classes into up to ``d`` sibling groups at random.
    """
    cfg = HashConfig(d=d, k=2, k_s=1, alpha=weight, beta=weight)
    mu = rng.normal(size=(n_c, d))
    mu[np.arange(n_c), rng.integers(0, d, n_c)] += peak
    if partition == "singletons":
        part = SiblingPartition.singletons(n_c)
    elif partition == "by_dim":
        part = SiblingPartition.from_keys(rng.integers(0, d, size=n_c).tolist())
    else:
        raise ValueError(f"unknown partition {partition!r}; expected one of {PARTITIONS}")
    return build_flow_network(ClassMeanSet(mu, np.arange(n_c), 2), part, 1, cfg)


def median_solve_time(n_c: int, d: int, reps: int, seed: int, backend: str | None = None,
                      repeats: int = 3, **kw) -> float:
    """Median over ``reps`` seeded instances of the best of ``repeats`` solves (seconds)."""
    rng = np.random.default_rng(seed)
    times = []
    for _ in range(reps):
        net = scaling_instance(rng, n_c, d, **kw)
        best = float("inf")
        for _ in range(repeats):
            t0 = time.perf_counter()
            solve_min_cost_flow(net, backend=backend)
            best = min(best, time.perf_counter() - t0)
        times.append(best)
    return float(np.median(times))


def scaling_sweep(n_c_values=(64, 128, 256, 512), d_values=(16, 32, 64, 128), fixed_d: int = 32,
                  fixed_n_c: int = 128, reps: int = 7, seed: int = 0, backend: str | None = None,
                  repeats: int = 3, **kw) -> dict:
    """Median times along each axis and the ratio between consecutive doublings."""
    by_n_c = [median_solve_time(n, fixed_d, reps, seed, backend, repeats, **kw) for n in n_c_values]
    by_d = [median_solve_time(fixed_n_c, d, reps, seed, backend, repeats, **kw) for d in d_values]

    def ratios(times):
        return [b / a if a > 0 else float("inf") for a, b in zip(times, times[1:])]

    return {
        "n_c": {"values": list(n_c_values), "d": fixed_d, "seconds": by_n_c, "ratios": ratios(by_n_c)},
        "d": {"values": list(d_values), "n_c": fixed_n_c, "seconds": by_d, "ratios": ratios(by_d)},
        "reps": reps,
        "repeats": repeats,
        "seed": seed,
        "backend": backend,
        "options": kw,
    }
