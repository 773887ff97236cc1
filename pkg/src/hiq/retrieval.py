"""Tree-bucket hash table, reranked queries and retrieval metrics."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from typing import Iterable, Sequence, TextIO

import numpy as np

from hiq.core import HashConfig, HierarchicalCode

log = logging.getLogger(__name__)

TABLE_FORMAT = "hiq-table"
TABLE_VERSION = 1


def leaf_indices(code: HierarchicalCode, cfg: HashConfig) -> list[int]:
    """Bucket indices of a code: the base-``d`` digits of the root-to-leaf path."""
    code.validate(cfg)
    prefix = 0
    for b in code.branch:
        prefix = prefix * cfg.d + b
    return [prefix * cfg.d + q for q in code.leaf_set]


def codes_from_activations(act: np.ndarray, cfg: HashConfig) -> list[HierarchicalCode]:
    """Per-item codes: argmax for every interior level, top-``k_s`` at the leaf level.

    Ties go to the lower dimension index.
    """
    act = np.asarray(act, dtype=np.float64)
    if act.ndim != 2 or act.shape[1] != cfg.d * cfg.k:
        raise ValueError(f"activations must have shape (n, {cfg.d * cfg.k}), got {act.shape}")
    n = act.shape[0]
    blocks = act.reshape(n, cfg.k, cfg.d)
    branch = blocks[:, :-1, :].argmax(axis=2)
    leaf = np.argsort(-blocks[:, -1, :], axis=1, kind="stable")[:, : cfg.k_s]
    return [HierarchicalCode(tuple(branch[i].tolist()), tuple(leaf[i].tolist())) for i in range(n)]


@dataclass(frozen=True)
class HashTable:
    """Sparse bucket map plus the base vectors used for reranking.

    ``item_buckets[i]`` lists the bucket indices of item ``i``.
    """

    cfg: HashConfig
    buckets: dict
    base_vectors: np.ndarray
    item_buckets: tuple

    @property
    def n_items(self) -> int:
        return self.base_vectors.shape[0]

    def bucket(self, index: int) -> np.ndarray:
        return self.buckets.get(int(index), np.zeros(0, dtype=np.int64))

    def occupancy(self) -> np.ndarray:
        """Sizes of the non-empty buckets."""
        return np.array([len(v) for v in self.buckets.values()], dtype=np.int64)


def table_from_codes(codes: Sequence[HierarchicalCode], base_vectors: np.ndarray, cfg: HashConfig) -> HashTable:
    base_vectors = np.asarray(base_vectors, dtype=np.float64).reshape(len(codes), -1)
    lists: dict = {}
    item_buckets = []
    for i, code in enumerate(codes):
        idx = leaf_indices(code, cfg)
        item_buckets.append(tuple(idx))
        for b in idx:
            lists.setdefault(b, []).append(i)
    buckets = {b: np.array(v, dtype=np.int64) for b, v in sorted(lists.items())}
    return HashTable(cfg, buckets, base_vectors, tuple(item_buckets))


def build_table(items: np.ndarray, model, cfg: HashConfig) -> HashTable:
    """Hash ``items`` with the model's activations; no flow solve at this stage."""
    items = np.asarray(items, dtype=np.float64)
    if items.shape[0] == 0:
        return HashTable(cfg, {}, np.zeros((0, model.base_dim)), ())
    codes = codes_from_activations(model.forward(items), cfg)
    return table_from_codes(codes, model.base_embedding(items), cfg)


def retrieve(table: HashTable, buckets: Iterable[int], exclude: int | None = None) -> np.ndarray:
    """Deduplicated union of the given buckets, optionally without one item id."""
    parts = [table.bucket(b) for b in buckets]
    ids = np.unique(np.concatenate(parts)) if parts else np.zeros(0, dtype=np.int64)
    if exclude is not None:
        ids = ids[ids != exclude]
    return ids


def rerank(table: HashTable, ids: np.ndarray, q_base: np.ndarray) -> np.ndarray:
    """``ids`` sorted by Euclidean distance to ``q_base`` (ties by id)."""
    if ids.size == 0:
        return ids
    dist = np.linalg.norm(table.base_vectors[ids] - q_base[None, :], axis=1)
    return ids[np.lexsort((ids, dist))]


def query(table: HashTable, q_item: np.ndarray, model, top_k: int | None = None,
          exclude: int | None = None) -> tuple[np.ndarray, int]:
    """Ranked ids from the query's buckets and the size of the retrieved union."""
    q_item = np.asarray(q_item, dtype=np.float64).reshape(1, -1)
    code = codes_from_activations(model.forward(q_item), table.cfg)[0]
    ids = retrieve(table, leaf_indices(code, table.cfg), exclude)
    ranked = rerank(table, ids, model.base_embedding(q_item)[0])
    return (ranked if top_k is None else ranked[:top_k]), int(ids.size)


def query_batch(table: HashTable, queries: np.ndarray, model, top_k: int | None = None,
                self_ids: Sequence[int] | None = None) -> tuple[list, np.ndarray]:
    """Vectorised :func:`query` over rows of ``queries``.

    ``self_ids[i]`` is the table id of query ``i`` when querying stored items.
    """
    queries = np.asarray(queries, dtype=np.float64)
    codes = codes_from_activations(model.forward(queries), table.cfg) if len(queries) else []
    base = model.base_embedding(queries) if len(queries) else np.zeros((0, table.base_vectors.shape[1]))
    rankings, counts = [], np.zeros(len(codes), dtype=np.int64)
    for i, code in enumerate(codes):
        ex = None if self_ids is None else int(self_ids[i])
        ids = retrieve(table, leaf_indices(code, table.cfg), ex)
        counts[i] = ids.size
        if top_k == 0:
            rankings.append(ids[:0])
            continue
        ranked = rerank(table, ids, base[i])
        rankings.append(ranked if top_k is None else ranked[:top_k])
    return rankings, counts


def linear_scan(base_vectors: np.ndarray, q_base: np.ndarray, exclude: int | None = None) -> np.ndarray:
    """Exhaustive ranking of every stored item by Euclidean distance."""
    ids = np.arange(base_vectors.shape[0])
    if exclude is not None:
        ids = ids[ids != exclude]
    dist = np.linalg.norm(base_vectors[ids] - q_base[None, :], axis=1)
    return ids[np.lexsort((ids, dist))]


def suf(table: HashTable, queries: np.ndarray, model, self_ids: Sequence[int] | None = None) -> float:
    """Items in the table divided by the mean number retrieved per query.

    Pass ``self_ids`` when the queries are stored items: their own copies are
    excluded from retrieval and from the candidate count.
    """
    _, counts = query_batch(table, queries, model, top_k=0, self_ids=self_ids)
    return suf_from_counts(table.n_items, counts, self_excluded=self_ids is not None)


def suf_from_counts(n_items: int, counts, self_excluded: bool = False) -> float:
    """Speedup factor from per-query retrieved counts; ``inf`` (logged) when nothing is retrieved."""
    counts = np.asarray(counts, dtype=np.float64)
    if counts.size == 0:
        raise ValueError("need at least one query")
    pool = n_items - (1 if self_excluded else 0)
    mean = counts.mean()
    if mean == 0:
        log.warning("no query retrieved anything; reporting an infinite speedup")
        return math.inf
    return pool / mean


def analytic_suf(d: int, k_s: int) -> float:
    """Expected speedup for uniformly random ``k_s``-sparse codes of width ``d``."""
    if not 1 <= k_s <= d:
        raise ValueError(f"k_s must lie in 1..{d}, got {k_s}")
    miss = math.comb(d - k_s, k_s) / math.comb(d, k_s)
    return 1.0 / (1.0 - miss)


def precision_at_k(rankings: Sequence[np.ndarray], query_labels, item_labels, k: int,
                   pad_misses: bool = False) -> float:
    """Mean fraction of the top ``k`` sharing the query's class.

    A query that retrieves fewer than ``k`` items is scored over what it
    retrieved (or over ``k`` with ``pad_misses``); an empty retrieval scores 0.
    """
    item_labels = np.asarray(item_labels)
    scores = []
    for ranked, lab in zip(rankings, query_labels):
        top = np.asarray(ranked, dtype=np.int64)[:k]
        if top.size == 0:
            scores.append(0.0)
            continue
        hits = int((item_labels[top] == lab).sum())
        scores.append(hits / (k if pad_misses else top.size))
    return float(np.mean(scores)) if scores else 0.0


def nmi(table: HashTable, labels) -> float:
    """Normalised mutual information between buckets and classes (arithmetic-mean normalisation)."""
    if table.cfg.k_s != 1:
        raise ValueError(f"bucket NMI needs one bucket per item (k_s = 1), got k_s = {table.cfg.k_s}")
    buckets = np.array([b[0] for b in table.item_buckets], dtype=np.int64)
    return nmi_from_assignments(buckets, labels)


def nmi_from_assignments(clusters, labels) -> float:
    clusters = np.asarray(clusters)
    labels = np.asarray(labels)
    if clusters.size == 0:
        return 0.0
    _, ci = np.unique(clusters, return_inverse=True)
    _, li = np.unique(labels, return_inverse=True)
    table = np.zeros((ci.max() + 1, li.max() + 1))
    np.add.at(table, (ci, li), 1)
    n = table.sum()
    pc = table.sum(axis=1) / n
    pl = table.sum(axis=0) / n
    h_c = -float((pc * np.log(pc)).sum())
    h_l = -float((pl * np.log(pl)).sum())
    nz = table > 0
    pij = table[nz] / n
    mi = float((pij * np.log(pij / np.outer(pc, pl)[nz])).sum())
    if h_c == 0 and h_l == 0:
        return 1.0
    denom = 0.5 * (h_c + h_l)
    return max(0.0, min(1.0, mi / denom))


def export_table(table: HashTable, out: TextIO) -> None:
    """JSON lines: a header, one line per bucket, then one line per stored item."""
    header = {
        "format": TABLE_FORMAT,
        "version": TABLE_VERSION,
        "config": table.cfg.to_dict(),
        "n_items": table.n_items,
        "n_buckets": len(table.buckets),
        "base_dim": int(table.base_vectors.shape[1]) if table.base_vectors.ndim == 2 else 0,
    }
    out.write(json.dumps(header) + "\n")
    for index, ids in table.buckets.items():
        out.write(json.dumps({"index": int(index), "ids": ids.tolist()}) + "\n")
    for i in range(table.n_items):
        out.write(json.dumps({"item": i, "buckets": list(table.item_buckets[i]),
                              "vector": table.base_vectors[i].tolist()}) + "\n")


def import_table(src: TextIO) -> HashTable:
    lines = [json.loads(line) for line in src if line.strip()]
    if not lines or lines[0].get("format") != TABLE_FORMAT:
        raise ValueError("not a hash table export")
    header = lines[0]
    if header.get("version") != TABLE_VERSION:
        raise ValueError(f"unsupported table version {header.get('version')}")
    cfg = HashConfig(**header["config"])
    buckets, items = {}, {}
    for rec in lines[1:]:
        if "index" in rec:
            buckets[int(rec["index"])] = np.array(rec["ids"], dtype=np.int64)
        else:
            items[int(rec["item"])] = rec
    n = int(header["n_items"])
    if sorted(items) != list(range(n)) or len(buckets) != header["n_buckets"]:
        raise ValueError("table export is truncated or inconsistent")
    vectors = np.array([items[i]["vector"] for i in range(n)], dtype=np.float64).reshape(n, header["base_dim"])
    item_buckets = tuple(tuple(items[i]["buckets"]) for i in range(n))
    return HashTable(cfg, dict(sorted(buckets.items())), vectors, item_buckets)
