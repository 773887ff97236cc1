"""Exact per-level code assignment as a minimum cost flow problem.

The network for one hierarchy level has vertices

    s | a_p (one per class) | b_{0,q} (shared) | b_{r,q} (per sibling group r >= 1) | t

and edges ``s -> a_p`` (capacity ``s_v``), unit edges ``a_p -> b_{r,q}`` priced
at the negated class-mean activation, ``g_r`` parallel unit edges
``b_{r,q} -> b_{0,q}`` priced ``2*alpha*i`` and ``n_c`` parallel unit edges
``b_{0,q} -> t`` priced ``2*beta*j``. Classes without a sibling connect straight
to the shared ``b_{0,q}`` layer.

All costs are fixed-point integers: ``round(cost_scale * x)``. The pairwise
weights are rounded once (``alpha_fp = round(cost_scale * alpha)``) so the
parallel edge ``i`` costs exactly ``2 * i * alpha_fp`` and the closed-form
collision count matches edge totals without rounding drift.
"""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass
from typing import Iterable, Sequence, TextIO

import numpy as np

from hiq import _mcf_py
from hiq.core import ClassMeanSet, ConfigError, HashConfig, SiblingPartition

log = logging.getLogger(__name__)

try:
    if os.environ.get("HIQ_PURE_PYTHON"):
        raise ImportError("pure-Python backend requested")
    from hiq import _mcf as _mcf_ext
except ImportError:  # pragma: no cover - depends on the build
    _mcf_ext = None

BACKENDS = {"python": _mcf_py.solve_level}
if _mcf_ext is not None:
    BACKENDS["compiled"] = _mcf_ext.solve_level
DEFAULT_BACKEND = "compiled" if _mcf_ext is not None else "python"

# Unary costs must stay well inside int64 once summed over the whole flow.
_COST_LIMIT = 1 << 60


class InfeasibleFlowError(RuntimeError):
    """The network cannot carry the required flow (a construction bug for valid inputs)."""


def fixed_point(x, scale: int) -> np.ndarray:
    """Round ``scale * x`` half-to-even into int64."""
    return np.rint(np.asarray(x, dtype=np.float64) * scale).astype(np.int64)


def pair_weights(cfg: HashConfig) -> tuple[int, int]:
    """Fixed-point (alpha, beta)."""
    return int(round(cfg.alpha * cfg.cost_scale)), int(round(cfg.beta * cfg.cost_scale))


@dataclass(frozen=True)
class FlowNetwork:
    """Directed network with integer capacities and costs.

    Edge ``e`` runs ``tail[e] -> head[e]``. ``unary_edges[p, q]`` is the id of
    the edge from class ``p`` to its level-``q`` dimension vertex.
    """

    n_nodes: int
    source: int
    sink: int
    tail: np.ndarray
    head: np.ndarray
    capacity: np.ndarray
    cost: np.ndarray
    supply: int
    s_v: int
    n_c: int
    d: int
    partition: SiblingPartition
    unary_edges: np.ndarray
    class_vertex: np.ndarray
    dim_vertex: np.ndarray
    sibling_edges: dict
    sink_edges: np.ndarray
    alpha_fp: int
    beta_fp: int

    @property
    def n_edges(self) -> int:
        return self.tail.shape[0]

    def vertex_name(self, v: int) -> str:
        if v == self.source:
            return "s"
        if v == self.sink:
            return "t"
        hit = np.flatnonzero(self.class_vertex == v)
        if hit.size:
            return f"a_{hit[0]}"
        r, q = np.argwhere(self.dim_vertex == v)[0]
        return f"b_{r},{q}"


@dataclass(frozen=True)
class FlowSolution:
    flow: np.ndarray
    total_cost: int
    codes: np.ndarray
    n_augmentations: int
    backend: str


def build_flow_network(
    means: ClassMeanSet, partition: SiblingPartition, s_v: int, cfg: HashConfig
) -> FlowNetwork:
    """Build the level network for ``means`` under the given sibling partition."""
    n_c, d = means.n_c, means.d
    if d != cfg.d:
        raise ConfigError(f"means have width {d} but cfg.d = {cfg.d}")
    if not 1 <= s_v <= d:
        raise ConfigError(f"level sparsity {s_v} outside 1..{d}")
    if partition.n_c != n_c:
        raise ConfigError(f"partition covers {partition.n_c} classes, means have {n_c}")
    if not np.isfinite(means.means).all():
        raise ValueError("class means contain non-finite values")
    peak = float(np.abs(means.means).max(initial=0.0)) * cfg.cost_scale
    if peak * n_c * s_v >= _COST_LIMIT:
        raise ConfigError("class means too large for the fixed-point cost scale")

    alpha_fp, beta_fp = pair_weights(cfg)
    groups = partition.groups
    n_groups = len(groups)  # pool + l sibling groups

    source = 0
    class_vertex = 1 + np.arange(n_c, dtype=np.int64)
    dim_vertex = (1 + n_c + np.arange(n_groups * d, dtype=np.int64)).reshape(n_groups, d)
    sink = 1 + n_c + n_groups * d
    n_nodes = sink + 1

    group_of = partition.group_of()
    unary_cost = -fixed_point(means.means, cfg.cost_scale)

    tails, heads, caps, costs = [], [], [], []

    # s -> a_p
    tails.append(np.full(n_c, source))
    heads.append(class_vertex)
    caps.append(np.full(n_c, s_v))
    costs.append(np.zeros(n_c, dtype=np.int64))

    # a_p -> b_{r(p),q}
    tails.append(np.repeat(class_vertex, d))
    heads.append(dim_vertex[group_of].ravel())
    caps.append(np.ones(n_c * d, dtype=np.int64))
    costs.append(unary_cost.ravel())
    unary_edges = (n_c + np.arange(n_c * d)).reshape(n_c, d)

    # (b_{r,q} -> b_{0,q})_i, i < g_r
    sibling_edges = {}
    next_id = n_c + n_c * d
    for r in range(1, n_groups):
        g = len(groups[r])
        ladder = 2 * alpha_fp * np.arange(g, dtype=np.int64)
        tails.append(np.repeat(dim_vertex[r], g))
        heads.append(np.repeat(dim_vertex[0], g))
        caps.append(np.ones(d * g, dtype=np.int64))
        costs.append(np.tile(ladder, d))
        sibling_edges[r] = (next_id + np.arange(d * g)).reshape(d, g)
        next_id += d * g

    # (b_{0,q} -> t)_j, j < n_c
    ladder = 2 * beta_fp * np.arange(n_c, dtype=np.int64)
    tails.append(np.repeat(dim_vertex[0], n_c))
    heads.append(np.full(d * n_c, sink))
    caps.append(np.ones(d * n_c, dtype=np.int64))
    costs.append(np.tile(ladder, d))
    sink_edges = (next_id + np.arange(d * n_c)).reshape(d, n_c)

    def cat(parts):
        return np.concatenate([np.asarray(p, dtype=np.int64) for p in parts])

    return FlowNetwork(
        n_nodes=n_nodes,
        source=source,
        sink=sink,
        tail=cat(tails),
        head=cat(heads),
        capacity=cat(caps),
        cost=cat(costs),
        supply=n_c * s_v,
        s_v=s_v,
        n_c=n_c,
        d=d,
        partition=partition,
        unary_edges=unary_edges,
        class_vertex=class_vertex,
        dim_vertex=dim_vertex,
        sibling_edges=sibling_edges,
        sink_edges=sink_edges,
        alpha_fp=alpha_fp,
        beta_fp=beta_fp,
    )


def solve_min_cost_flow(net: FlowNetwork, backend: str | None = None) -> FlowSolution:
    """Exact integral minimum cost flow of value ``net.supply`` from source to sink.

    Source edges carry exactly the required flow in total, so every feasible
    flow saturates them. Each class then routes its ``s_v`` units one at a time
    along shortest residual paths, found by Dijkstra on reduced costs over the
    dimension vertices (class vertices are contracted into moves between
    dimensions). ``total_cost`` is accumulated along the augmenting paths.
    """
    backend = backend or DEFAULT_BACKEND
    if backend not in BACKENDS:
        raise ValueError(f"unknown backend {backend!r}; available: {sorted(BACKENDS)}")
    kernel = BACKENDS[backend]

    if net.n_c == 0:
        flow = np.zeros(net.n_edges, dtype=np.int64)
        codes = np.zeros((0, net.d), dtype=np.int8)
        return FlowSolution(flow=flow, total_cost=0, codes=codes, n_augmentations=0, backend=backend)
    part = net.partition
    group_size = np.array([len(g) for g in part.groups], dtype=np.int64)
    group_of = part.group_of()
    unary = np.ascontiguousarray(net.cost[net.unary_edges], dtype=np.int64)
    try:
        z, y, y0, total, n_aug = kernel(
            unary, group_of, group_size, net.s_v, net.alpha_fp, net.beta_fp,
            np.arange(net.n_c, dtype=np.int64),
        )
    except RuntimeError as exc:
        raise InfeasibleFlowError(str(exc)) from exc
    z = np.asarray(z, dtype=np.int64).reshape(net.n_c, net.d)
    y = np.asarray(y, dtype=np.int64).reshape(len(part.groups), net.d)
    y0 = np.asarray(y0, dtype=np.int64)

    flow = np.zeros(net.n_edges, dtype=np.int64)
    flow[: net.n_c] = net.s_v
    flow[net.unary_edges] = z
    # Parallel copies are priced in increasing order, so an optimal flow uses a prefix.
    for r, edges in net.sibling_edges.items():
        flow[edges] = np.arange(edges.shape[1]) < y[r][:, None]
    flow[net.sink_edges] = np.arange(net.sink_edges.shape[1]) < y0[:, None]
    return FlowSolution(
        flow=flow, total_cost=int(total), codes=z.astype(np.int8), n_augmentations=int(n_aug), backend=backend
    )


def check_flow(net: FlowNetwork, flow: np.ndarray) -> list[str]:
    """Capacity and conservation violations of ``flow`` (empty list when feasible)."""
    flow = np.asarray(flow, dtype=np.int64)
    problems = []
    if flow.shape != (net.n_edges,):
        return [f"flow has shape {flow.shape}, expected ({net.n_edges},)"]
    bad = np.flatnonzero((flow < 0) | (flow > net.capacity))
    for e in bad[:10]:
        problems.append(f"edge {e} carries {flow[e]} outside [0, {net.capacity[e]}]")
    balance = np.zeros(net.n_nodes, dtype=np.int64)
    np.add.at(balance, net.tail, -flow)
    np.add.at(balance, net.head, flow)
    want = np.zeros(net.n_nodes, dtype=np.int64)
    want[net.source] = -net.supply
    want[net.sink] = net.supply
    for v in np.flatnonzero(balance != want)[:10]:
        problems.append(f"vertex {net.vertex_name(v)} has net inflow {balance[v]}, expected {want[v]}")
    return problems


def _pairwise_collisions(codes: np.ndarray, members: Sequence[int]) -> int:
    """Sum over ordered pairs p1 != p2 in ``members`` of z_p1 . z_p2."""
    if len(members) < 2:
        return 0
    y = codes[list(members)].sum(axis=0).astype(np.int64)
    return int((y * (y - 1)).sum())


def _check_codes(codes: np.ndarray, n_c: int, d: int) -> np.ndarray:
    codes = np.asarray(codes)
    if codes.shape != (n_c, d):
        raise ValueError(f"codes have shape {codes.shape}, expected {(n_c, d)}")
    if not np.isin(codes, (0, 1)).all():
        raise ValueError("codes must be binary")
    sparsity = codes.sum(axis=1)
    if n_c and (sparsity != sparsity[0]).any():
        raise ValueError(f"codes have unequal sparsity {sparsity.tolist()}")
    return codes.astype(np.int64)


def flow_cost_closed_form(
    codes: np.ndarray,
    means: ClassMeanSet,
    partition: SiblingPartition,
    cfg: HashConfig,
    fixed: bool = False,
):
    """Objective of a class-code assignment without reference to any flow.

    ``-sum_p c_p . z_p + alpha * (sibling collisions) + beta * (all collisions)``,
    with collisions counted over ordered pairs. With ``fixed=True`` the value is
    the integer cost in units of ``1 / cfg.cost_scale``.
    """
    z = _check_codes(codes, means.n_c, means.d)
    sibling = sum(_pairwise_collisions(z, g) for g in partition.sibling_groups)
    every = _pairwise_collisions(z, range(means.n_c))
    if fixed:
        alpha_fp, beta_fp = pair_weights(cfg)
        unary = -int((fixed_point(means.means, cfg.cost_scale) * z).sum())
        return unary + alpha_fp * sibling + beta_fp * every
    return float(-(means.means * z).sum() + cfg.alpha * sibling + cfg.beta * every)


def write_dimacs(net: FlowNetwork, out: TextIO, comments: Iterable[str] = ()) -> None:
    """DIMACS min-cost-flow text: ``p min``, ``n`` supply lines, ``a`` arc lines (1-based ids)."""
    for c in comments:
        out.write(f"c {c}\n")
    out.write(f"p min {net.n_nodes} {net.n_edges}\n")
    out.write(f"n {net.source + 1} {net.supply}\n")
    out.write(f"n {net.sink + 1} {-net.supply}\n")
    for t, h, u, c in zip(net.tail.tolist(), net.head.tolist(), net.capacity.tolist(), net.cost.tolist()):
        out.write(f"a {t + 1} {h + 1} 0 {u} {c}\n")


def read_dimacs(src: TextIO) -> dict:
    """Parse the arcs and supplies of a DIMACS min-cost-flow file."""
    arcs, supply, header = [], {}, None
    for line in src:
        parts = line.split()
        if not parts or parts[0] == "c":
            continue
        if parts[0] == "p":
            header = (int(parts[2]), int(parts[3]))
        elif parts[0] == "n":
            supply[int(parts[1]) - 1] = int(parts[2])
        elif parts[0] == "a":
            t, h, lo, hi, c = map(int, parts[1:6])
            arcs.append((t - 1, h - 1, lo, hi, c))
    if header is None:
        raise ValueError("missing problem line")
    return {"n_nodes": header[0], "n_arcs": header[1], "supply": supply, "arcs": arcs}
