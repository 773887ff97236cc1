"""Domain types and configuration shared across the package."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

INDEX_MAX = np.iinfo(np.int64).max


class ConfigError(ValueError):
    """Raised when a configuration violates its invariants."""


@dataclass(frozen=True)
class HashConfig:
    """Shape of the hierarchical code and the pairwise penalty weights.

    ``alpha`` weighs collisions between sibling classes, ``beta`` weighs
    collisions between any two distinct classes. Both are applied per ordered
    pair, so one unordered collision costs ``2 * alpha`` (resp. ``2 * beta``).
    """

    d: int
    k: int
    k_s: int = 1
    alpha: float = 0.1
    beta: float = 0.1
    cost_scale: int = 2**20

    def __post_init__(self):
        validate_config(self)

    @property
    def n_buckets(self) -> int:
        return self.d**self.k

    def level_sparsity(self, level: int) -> int:
        """Number of active bits at ``level`` (1-based)."""
        if not 1 <= level <= self.k:
            raise ValueError(f"level {level} outside 1..{self.k}")
        return self.k_s if level == self.k else 1

    def to_dict(self) -> dict:
        return {
            "d": self.d,
            "k": self.k,
            "k_s": self.k_s,
            "alpha": self.alpha,
            "beta": self.beta,
            "cost_scale": self.cost_scale,
        }


def validate_config(cfg: HashConfig) -> None:
    """Raise :class:`ConfigError` listing every violated invariant."""
    problems = []
    for name in ("d", "k", "k_s", "cost_scale"):
        value = getattr(cfg, name)
        if isinstance(value, bool) or not isinstance(value, (int, np.integer)):
            problems.append(f"{name} must be an integer, got {value!r}")
    if problems:
        raise ConfigError("; ".join(problems))
    if cfg.d < 1:
        problems.append(f"d must be positive, got {cfg.d}")
    if cfg.k < 1:
        problems.append(f"k must be positive, got {cfg.k}")
    if cfg.k_s < 1:
        problems.append(f"k_s must be at least 1, got {cfg.k_s}")
    elif cfg.k_s > cfg.d:
        problems.append(f"k_s exceeds d ({cfg.k_s} > {cfg.d})")
    if not np.isfinite(cfg.alpha) or cfg.alpha < 0:
        problems.append(f"alpha must be a non-negative real, got {cfg.alpha}")
    if not np.isfinite(cfg.beta) or cfg.beta < 0:
        problems.append(f"beta must be a non-negative real, got {cfg.beta}")
    if cfg.cost_scale < 1:
        problems.append(f"cost_scale must be positive, got {cfg.cost_scale}")
    if cfg.d >= 1 and cfg.k >= 1 and int(cfg.d) ** int(cfg.k) - 1 > INDEX_MAX:
        problems.append(f"bucket count d^k = {cfg.d}^{cfg.k} overflows int64 indices")
    if problems:
        raise ConfigError("; ".join(problems))


@dataclass(frozen=True)
class EmbeddingBatch:
    """Activations ``f(x; theta)`` for a minibatch, viewed as ``k`` slices of width ``d``."""

    features: np.ndarray
    labels: np.ndarray
    d: int

    def __post_init__(self):
        features = np.asarray(self.features, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        if features.ndim != 2:
            raise ValueError("features must be a 2-d array")
        if labels.shape != (features.shape[0],):
            raise ValueError("labels must have one entry per row of features")
        if self.d < 1 or features.shape[1] % self.d:
            raise ValueError(f"feature width {features.shape[1]} is not a multiple of d={self.d}")
        features.flags.writeable = False
        labels.flags.writeable = False
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def k(self) -> int:
        return self.features.shape[1] // self.d

    def level_slice(self, v: int) -> np.ndarray:
        """Columns ``[(v-1)*d, v*d)`` for 1-based level ``v``."""
        if not 1 <= v <= self.k:
            raise ValueError(f"level {v} outside 1..{self.k}")
        return self.features[:, (v - 1) * self.d : v * self.d]

    def class_ids(self) -> np.ndarray:
        """Distinct labels in order of first appearance."""
        _, first = np.unique(self.labels, return_index=True)
        return self.labels[np.sort(first)]


@dataclass(frozen=True)
class HierarchicalCode:
    """Compact code: one branch per interior level and a sorted leaf set."""

    branch: tuple[int, ...]
    leaf_set: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "branch", tuple(int(b) for b in self.branch))
        leaves = tuple(sorted(int(q) for q in self.leaf_set))
        if len(set(leaves)) != len(leaves):
            raise ValueError(f"duplicate leaf indices in {leaves}")
        object.__setattr__(self, "leaf_set", leaves)

    def validate(self, cfg: HashConfig) -> None:
        if len(self.branch) != cfg.k - 1:
            raise ValueError(f"expected {cfg.k - 1} branch indices, got {len(self.branch)}")
        if len(self.leaf_set) != cfg.k_s:
            raise ValueError(f"expected {cfg.k_s} leaves, got {len(self.leaf_set)}")
        for q in self.branch + self.leaf_set:
            if not 0 <= q < cfg.d:
                raise ValueError(f"index {q} outside [0, {cfg.d})")


def dense_code(code: HierarchicalCode, cfg: HashConfig) -> np.ndarray:
    """Binary ``d x k`` matrix whose column ``v`` is the level-``v`` indicator."""
    code.validate(cfg)
    h = np.zeros((cfg.d, cfg.k), dtype=np.int8)
    for v, q in enumerate(code.branch):
        h[q, v] = 1
    h[list(code.leaf_set), cfg.k - 1] = 1
    return h


def compact_code(h: np.ndarray, cfg: HashConfig) -> HierarchicalCode:
    """Inverse of :func:`dense_code`."""
    h = np.asarray(h)
    if h.shape != (cfg.d, cfg.k):
        raise ValueError(f"expected shape {(cfg.d, cfg.k)}, got {h.shape}")
    if not np.isin(h, (0, 1)).all():
        raise ValueError("dense code must be binary")
    sums = h.sum(axis=0)
    if (sums[:-1] != 1).any() or sums[-1] != cfg.k_s:
        raise ValueError(f"column sums {sums.tolist()} violate the sparsity pattern")
    branch = tuple(int(np.flatnonzero(h[:, v])[0]) for v in range(cfg.k - 1))
    return HierarchicalCode(branch, tuple(np.flatnonzero(h[:, -1]).tolist()))


@dataclass(frozen=True)
class ClassMeanSet:
    """Per-class mean activations for one level; row ``p`` belongs to ``class_ids[p]``."""

    means: np.ndarray
    class_ids: np.ndarray
    m: int

    def __post_init__(self):
        means = np.asarray(self.means, dtype=np.float64)
        if means.ndim == 1:
            means = means[None, :]
        if means.ndim != 2:
            raise ValueError("means must be a 2-d array")
        ids = np.asarray(self.class_ids, dtype=np.int64)
        if ids.shape != (means.shape[0],):
            raise ValueError("class_ids must align with the rows of means")
        means.flags.writeable = False
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "class_ids", ids)

    @property
    def n_c(self) -> int:
        return self.means.shape[0]

    @property
    def d(self) -> int:
        return self.means.shape[1]


@dataclass(frozen=True)
class SiblingPartition:
    """Classes grouped by shared code prefix.

    ``groups[0]`` is the singleton pool (classes with no sibling); each later
    group holds two or more classes that share a tree node.
    """

    groups: tuple[tuple[int, ...], ...]
    n_c: int = field(default=-1)

    def __post_init__(self):
        groups = tuple(tuple(sorted(int(p) for p in g)) for g in self.groups)
        if not groups:
            groups = ((),)
        seen = [p for g in groups for p in g]
        n_c = self.n_c if self.n_c >= 0 else len(seen)
        if sorted(seen) != list(range(n_c)):
            raise ValueError(f"groups do not partition range({n_c}): {groups}")
        for g in groups[1:]:
            if len(g) < 2:
                raise ValueError(f"non-pool group {g} has fewer than two classes")
        object.__setattr__(self, "groups", groups)
        object.__setattr__(self, "n_c", n_c)

    @classmethod
    def singletons(cls, n_c: int) -> "SiblingPartition":
        return cls((tuple(range(n_c)),), n_c)

    @classmethod
    def from_keys(cls, keys: Sequence) -> "SiblingPartition":
        """Group class indices by hashable key; unique keys go to the pool."""
        buckets: dict = {}
        for p, key in enumerate(keys):
            buckets.setdefault(key, []).append(p)
        pool = [g[0] for g in buckets.values() if len(g) == 1]
        rest = [tuple(g) for g in buckets.values() if len(g) > 1]
        return cls((tuple(pool), *rest), len(keys))

    @property
    def pool(self) -> tuple[int, ...]:
        return self.groups[0]

    @property
    def sibling_groups(self) -> tuple[tuple[int, ...], ...]:
        return self.groups[1:]

    def group_size(self, r: int) -> int:
        return len(self.groups[r])

    def group_of(self) -> np.ndarray:
        """Group index for every class (0 for the pool)."""
        out = np.zeros(self.n_c, dtype=np.int64)
        for r, g in enumerate(self.groups):
            out[list(g)] = r
        return out
