"""Brute-force certification of the flow solver and of the code-to-flow map."""

from __future__ import annotations

import itertools
from math import comb

import numpy as np

from hiq.core import ClassMeanSet, ConfigError, HashConfig, SiblingPartition
from hiq.flownet import FlowNetwork, fixed_point, pair_weights

ENUM_LIMIT = 10**7
_CHUNK = 1 << 15


class OracleTooLarge(ValueError):
    """The enumeration would exceed :data:`ENUM_LIMIT` assignments."""


def colex_subsets(d: int, s: int) -> list[tuple[int, ...]]:
    """All ``s``-subsets of ``range(d)`` in colexicographic order."""
    return sorted(itertools.combinations(range(d), s), key=lambda c: c[::-1])


def brute_force_minimize(
    means: ClassMeanSet, partition: SiblingPartition, s_v: int, cfg: HashConfig
) -> tuple[np.ndarray, int]:
    """Exhaustive minimum of the fixed-point class-level objective.

    Every class picks one of the ``C(d, s_v)`` subsets, indexed by colex rank;
    assignments are visited as an odometer over those ranks with class 0 the
    most significant digit, so the first strict minimum found is the
    lexicographically smallest rank tuple among all optima.

    Returns ``(codes, objective)`` with ``objective`` in units of
    ``1 / cfg.cost_scale``.
    """
    n_c, d = means.n_c, means.d
    if partition.n_c != n_c:
        raise ConfigError(f"partition covers {partition.n_c} classes, means have {n_c}")
    if not 1 <= s_v <= d:
        raise ConfigError(f"level sparsity {s_v} outside 1..{d}")
    subsets = colex_subsets(d, s_v)
    n_sub = len(subsets)
    total = n_sub**n_c
    if total > ENUM_LIMIT:
        raise OracleTooLarge(f"C({d},{s_v})^{n_c} = {total} assignments exceed {ENUM_LIMIT}")

    ind = np.zeros((n_sub, d), dtype=np.int64)
    for j, sub in enumerate(subsets):
        ind[j, list(sub)] = 1
    scaled = fixed_point(means.means, cfg.cost_scale)
    unary = -(scaled @ ind.T)  # (n_c, n_sub)
    alpha_fp, beta_fp = pair_weights(cfg)
    group_of = partition.group_of()

    best_val, best_idx = None, -1
    place = n_sub ** np.arange(n_c - 1, -1, -1, dtype=np.int64)
    for lo in range(0, total, _CHUNK):
        flat = np.arange(lo, min(total, lo + _CHUNK), dtype=np.int64)
        digits = (flat[:, None] // place[None, :]) % n_sub  # (chunk, n_c)
        val = unary[np.arange(n_c)[None, :], digits].sum(axis=1)
        z = ind[digits]  # (chunk, n_c, d)
        y_all = z.sum(axis=1)
        val += beta_fp * (y_all * (y_all - 1)).sum(axis=1)
        for r in range(1, len(partition.groups)):
            y_r = z[:, group_of == r, :].sum(axis=1)
            val += alpha_fp * (y_r * (y_r - 1)).sum(axis=1)
        j = int(np.argmin(val))  # first occurrence wins ties
        if best_val is None or val[j] < best_val:
            best_val, best_idx = int(val[j]), int(flat[j])

    digits = [(best_idx // int(p)) % n_sub for p in place]
    codes = ind[digits].astype(np.int8) if n_c else np.zeros((0, d), dtype=np.int8)
    return codes, (best_val if best_val is not None else 0)


def induced_flow(codes: np.ndarray, partition: SiblingPartition, s_v: int, net: FlowNetwork) -> np.ndarray:
    """Edge flow induced by a class-code assignment.

    Source edges carry ``s_v``; the edge from class ``p`` to dimension ``q``
    carries ``codes[p, q]``; the first ``y`` parallel copies out of every
    dimension vertex carry one unit each, where ``y`` counts the classes routed
    through that vertex. Built edge by edge from the network arrays.
    """
    codes = np.asarray(codes, dtype=np.int64)
    flow = np.zeros(net.n_edges, dtype=np.int64)
    if net.n_c == 0:
        return flow
    if codes.shape != (net.n_c, net.d):
        raise ValueError(f"codes have shape {codes.shape}, expected {(net.n_c, net.d)}")
    if (codes.sum(axis=1) != s_v).any():
        raise ValueError(f"every class code must have exactly {s_v} active dimensions")

    # units entering each dimension vertex
    inflow = np.zeros(net.n_nodes, dtype=np.int64)
    for e in range(net.n_edges):
        t, h = int(net.tail[e]), int(net.head[e])
        if t == net.source:
            flow[e] = s_v
        elif t in net.class_vertex:
            p = int(t - net.class_vertex[0])
            q = int(np.flatnonzero((net.dim_vertex == h).any(axis=0))[0])
            flow[e] = codes[p, q]
            inflow[h] += codes[p, q]

    # parallel copies in the order they were built, which is increasing cost
    used = np.zeros(net.n_nodes, dtype=np.int64)
    for e in range(net.n_edges):
        t, h = int(net.tail[e]), int(net.head[e])
        if t in net.dim_vertex and net.capacity[e] == 1 and (h == net.sink or h in net.dim_vertex[0]):
            if used[t] < inflow[t]:
                flow[e] = 1
                used[t] += 1
                if h != net.sink:
                    inflow[h] += 1
    return flow


def count_assignments(d: int, s_v: int, n_c: int) -> int:
    return comb(d, s_v) ** n_c


def random_instance(rng: np.random.Generator, d_range=(2, 6), n_c_range=(1, 4), s_choices=(1, 2),
                    weight_range=(0.0, 2.0)):
    """Small random level problem: ``(means, partition, s_v, cfg)``.

    Means are standard normal, sibling groups come from random keys, and
    ``alpha``, ``beta`` are uniform on ``weight_range``.
    """
    d = int(rng.integers(d_range[0], d_range[1] + 1))
    n_c = int(rng.integers(n_c_range[0], n_c_range[1] + 1))
    s_v = int(rng.choice([s for s in s_choices if s <= d]))
    alpha, beta = rng.uniform(*weight_range, size=2)
    cfg = HashConfig(d=d, k=1, k_s=s_v, alpha=float(alpha), beta=float(beta))
    means = ClassMeanSet(rng.normal(size=(n_c, d)), np.arange(n_c), 1)
    partition = SiblingPartition.from_keys(rng.integers(0, max(1, n_c - 1), size=n_c).tolist())
    return means, partition, s_v, cfg


def verify_mcf(trials: int, seed: int, backend: str | None = None) -> dict:
    """Compare the flow solver with exhaustive search on ``trials`` random instances.

    A trial passes when the objectives agree exactly, the returned flow is
    feasible and its cost equals the closed form of the returned codes.
    """
    from hiq.flownet import build_flow_network, check_flow, flow_cost_closed_form, solve_min_cost_flow

    rng = np.random.default_rng(seed)
    failures = []
    for t in range(trials):
        means, part, s_v, cfg = random_instance(rng)
        net = build_flow_network(means, part, s_v, cfg)
        sol = solve_min_cost_flow(net, backend=backend)
        _, best = brute_force_minimize(means, part, s_v, cfg)
        problems = check_flow(net, sol.flow)
        edge_cost = int((sol.flow * net.cost).sum())
        closed = flow_cost_closed_form(sol.codes, means, part, cfg, fixed=True)
        if sol.total_cost != best:
            problems.append(f"solver objective {sol.total_cost} != oracle {best}")
        if not edge_cost == closed == sol.total_cost:
            problems.append(f"edge cost {edge_cost}, closed form {closed}, reported {sol.total_cost} differ")
        if problems:
            failures.append({"trial": t, "n_c": means.n_c, "d": means.d, "s_v": s_v, "problems": problems})
    return {"trials": trials, "seed": seed, "passed": trials - len(failures), "failed": failures,
            "ok": not failures}
