"""Cascading per-level code assignment, sibling bookkeeping and label remapping."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from hiq.core import ClassMeanSet, EmbeddingBatch, HashConfig, HierarchicalCode, SiblingPartition
from hiq.flownet import build_flow_network, flow_cost_closed_form, solve_min_cost_flow

REMAP_MODES = ("per_level", "prefix", "disabled")


@dataclass(frozen=True)
class LevelAssignment:
    """Codes for one level.

    ``item_class[i]`` is the row of item ``i`` in ``class_ids``/``class_codes``.
    ``prefix[p]`` holds class ``p``'s active index tuples for levels ``1..level``.
    ``objective`` is the fixed-point class-level objective of ``class_codes``.
    """

    level: int
    class_ids: np.ndarray
    class_codes: np.ndarray
    item_class: np.ndarray
    partition: SiblingPartition
    prefix: tuple
    objective: int
    remapped_labels: np.ndarray

    @property
    def n_c(self) -> int:
        return self.class_codes.shape[0]

    @property
    def item_codes(self) -> np.ndarray:
        return self.class_codes[self.item_class]

    @property
    def labels(self) -> np.ndarray:
        return self.class_ids[self.item_class]


@dataclass(frozen=True)
class CascadeResult:
    levels: list
    codes: list  # HierarchicalCode per class, aligned with class_ids
    class_ids: np.ndarray


def class_means(batch: EmbeddingBatch, level: int) -> ClassMeanSet:
    """Per-class mean of the level slice, classes in first-appearance order."""
    ids = batch.class_ids()
    item_class = _item_class(batch.labels, ids)
    counts = np.bincount(item_class, minlength=ids.size)
    if counts.size and (counts != counts[0]).any():
        raise ValueError(f"classes have unequal example counts {counts.tolist()}")
    m = int(counts[0]) if counts.size else 0
    sl = batch.level_slice(level)
    sums = np.zeros((ids.size, sl.shape[1]))
    np.add.at(sums, item_class, sl)
    return ClassMeanSet(sums / max(m, 1), ids, m)


def _item_class(labels: np.ndarray, ids: np.ndarray) -> np.ndarray:
    lookup = {int(c): p for p, c in enumerate(ids)}
    return np.array([lookup[int(y)] for y in labels], dtype=np.int64)


def assign_level(
    means: ClassMeanSet,
    partition: SiblingPartition,
    level: int,
    cfg: HashConfig,
    labels: np.ndarray | None = None,
    prev_prefix: tuple | None = None,
    remap: str = "per_level",
    backend: str | None = None,
) -> LevelAssignment:
    """Exact minimiser of the class-level objective at ``level``.

    ``labels`` maps items to classes (one item per class when omitted) and
    ``prev_prefix`` carries the codes of the earlier levels.
    """
    s_v = cfg.level_sparsity(level)
    net = build_flow_network(means, partition, s_v, cfg)
    sol = solve_min_cost_flow(net, backend=backend)
    codes = sol.codes
    if labels is None:
        item_class = np.arange(means.n_c, dtype=np.int64)
    else:
        item_class = _item_class(np.asarray(labels), means.class_ids)
    if prev_prefix is None:
        prev_prefix = tuple(() for _ in range(means.n_c))
    prefix = tuple(
        prev_prefix[p] + (tuple(np.flatnonzero(codes[p]).tolist()),) for p in range(means.n_c)
    )
    out = LevelAssignment(
        level=level,
        class_ids=means.class_ids,
        class_codes=codes,
        item_class=item_class,
        partition=partition,
        prefix=prefix,
        objective=sol.total_cost,
        remapped_labels=np.zeros(0, dtype=np.int64),
    )
    object.__setattr__(out, "remapped_labels", remap_labels(out, remap))
    return out


def update_sibling_partition(prev: SiblingPartition, assignment: LevelAssignment) -> SiblingPartition:
    """Group classes by their full code prefix; lone classes join the pool.

    The first level puts every class in the pool because the root has no
    sibling term, not because the prefixes differ, so grouping restarts from
    the prefix rather than refining ``prev``.
    """
    if prev.n_c != assignment.n_c:
        raise ValueError(f"partition covers {prev.n_c} classes, assignment has {assignment.n_c}")
    return SiblingPartition.from_keys(list(assignment.prefix))


def remap_labels(assignment: LevelAssignment, mode: str = "per_level") -> np.ndarray:
    """Item labels under which items sharing a code are one class.

    ``per_level`` keys on the level code alone, ``prefix`` on the codes of
    all levels so far, ``disabled`` returns the original labels. Remapped
    labels are consecutive from 0 in order of first appearance.
    """
    if mode not in REMAP_MODES:
        raise ValueError(f"unknown remap mode {mode!r}; expected one of {REMAP_MODES}")
    if mode == "disabled":
        return assignment.labels.copy()
    if mode == "per_level":
        class_key = [assignment.prefix[p][-1] for p in range(assignment.n_c)]
    else:
        class_key = list(assignment.prefix)
    seen: dict = {}
    out = np.empty(assignment.item_class.size, dtype=np.int64)
    for i, p in enumerate(assignment.item_class):
        out[i] = seen.setdefault(class_key[p], len(seen))
    return out


def cascade_assign(
    batch: EmbeddingBatch, cfg: HashConfig, remap: str = "per_level", backend: str | None = None
) -> CascadeResult:
    """Assign all ``k`` levels in order; each level sees the grouping induced by the earlier ones."""
    if batch.k != cfg.k or batch.d != cfg.d:
        raise ValueError(f"batch has k={batch.k}, d={batch.d}; config expects k={cfg.k}, d={cfg.d}")
    partition = SiblingPartition.singletons(batch.class_ids().size)
    prefix = None
    levels = []
    for v in range(1, cfg.k + 1):
        means = class_means(batch, v)
        a = assign_level(means, partition, v, cfg, labels=batch.labels, prev_prefix=prefix, remap=remap,
                         backend=backend)
        levels.append(a)
        prefix = a.prefix
        partition = update_sibling_partition(partition, a)
    codes = [HierarchicalCode(tuple(q[0] for q in pre[:-1]), pre[-1]) for pre in prefix]
    return CascadeResult(levels=levels, codes=codes, class_ids=levels[0].class_ids)


def item_pairs(labels: np.ndarray, class_ids: np.ndarray, partition: SiblingPartition):
    """Ordered item pairs ``(sibling, dissimilar)``.

    Dissimilar pairs are all pairs of items from different classes; sibling
    pairs are the dissimilar ones whose classes share a group other than the pool.
    """
    item_class = _item_class(np.asarray(labels), np.asarray(class_ids))
    grp = partition.group_of()[item_class]
    i, j = np.nonzero(item_class[:, None] != item_class[None, :])
    sib = (grp[i] == grp[j]) & (grp[i] > 0)
    return np.stack([i[sib], j[sib]], axis=1), np.stack([i, j], axis=1)


def objective_g(item_codes, batch: EmbeddingBatch, level: int, sibling_pairs, dissimilar_pairs, cfg: HashConfig) -> float:
    """Item-level objective with per-pair weights ``alpha/m`` and ``beta/m``.

    ``m`` is the number of examples per class in ``batch``.
    """
    h = np.asarray(item_codes, dtype=np.float64)
    f = batch.level_slice(level)
    if h.shape != f.shape:
        raise ValueError(f"codes have shape {h.shape}, expected {f.shape}")
    s_v = cfg.level_sparsity(level)
    if not np.isin(h, (0, 1)).all() or (h.sum(axis=1) != s_v).any():
        raise ValueError(f"item codes must be binary with {s_v} active dimensions")
    counts = np.unique(batch.labels, return_counts=True)[1]
    m = int(counts[0]) if counts.size else 1
    sib = np.asarray(sibling_pairs, dtype=np.int64).reshape(-1, 2)
    dis = np.asarray(dissimilar_pairs, dtype=np.int64).reshape(-1, 2)
    unary = -float((f * h).sum())
    sib_term = float((h[sib[:, 0]] * h[sib[:, 1]]).sum())
    dis_term = float((h[dis[:, 0]] * h[dis[:, 1]]).sum())
    return unary + cfg.alpha / m * sib_term + cfg.beta / m * dis_term


def class_objective(codes, means: ClassMeanSet, partition: SiblingPartition, cfg: HashConfig) -> float:
    """Real-valued class-level objective (same expression the flow network minimises)."""
    return flow_cost_closed_form(codes, means, partition, cfg)


def bound_gap(batch: EmbeddingBatch, means: ClassMeanSet, level: int, s_v: int) -> float:
    """Sum over items of the ``s_v`` largest entries of ``c_{y_i} - f_i``."""
    f = batch.level_slice(level)
    item_class = _item_class(batch.labels, means.class_ids)
    resid = means.means[item_class] - f
    if resid.size == 0:
        return 0.0
    top = -np.sort(-resid, axis=1)[:, :s_v]
    return float(top.sum())
