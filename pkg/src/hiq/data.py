"""Labelled feature datasets: CSV interchange, synthetic clusters, splits."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.features, dtype=np.float64)
        y = np.asarray(self.labels, dtype=np.int64)
        if x.ndim != 2 or y.shape != (x.shape[0],):
            raise ValueError(f"features {x.shape} and labels {y.shape} do not align")
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "labels", y)

    def __len__(self) -> int:
        return self.labels.size

    @property
    def input_dim(self) -> int:
        return self.features.shape[1]

    def subset(self, idx) -> "Dataset":
        return Dataset(self.features[idx], self.labels[idx])


def gen_synthetic(n_classes: int, per_class: int, input_dim: int, cluster_sep: float, seed: int) -> Dataset:
    """Gaussian clusters with unit within-class variance.

    Centroids are ``cluster_sep`` times random unit vectors, so with
    ``cluster_sep = 0`` every class shares the origin.
    """
    if min(n_classes, per_class, input_dim) < 1:
        raise ValueError("sizes must be positive")
    rng = np.random.default_rng(seed)
    dirs = rng.normal(size=(n_classes, input_dim))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    centres = cluster_sep * dirs
    labels = np.repeat(np.arange(n_classes), per_class)
    x = centres[labels] + rng.normal(size=(labels.size, input_dim))
    return Dataset(x, labels)


def write_csv(ds: Dataset, path) -> None:
    """``label,x0,x1,...`` with a header row; floats written with ``repr`` so they round-trip."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["label"] + [f"x{j}" for j in range(ds.input_dim)])
        for y, row in zip(ds.labels.tolist(), ds.features.tolist()):
            w.writerow([y] + [repr(v) for v in row])


def read_csv(path) -> Dataset:
    """First column integer label, remaining columns features; header optional."""
    rows = []
    with open(Path(path), newline="") as fh:
        for i, rec in enumerate(csv.reader(fh)):
            if not rec:
                continue
            try:
                label = int(rec[0])
            except ValueError:
                if i == 0:
                    continue  # header
                raise ValueError(f"{path}:{i + 1}: label {rec[0]!r} is not an integer") from None
            try:
                rows.append((label, [float(v) for v in rec[1:]]))
            except ValueError as exc:
                raise ValueError(f"{path}:{i + 1}: {exc}") from None
    if not rows:
        raise ValueError(f"{path}: no data rows")
    width = {len(r[1]) for r in rows}
    if len(width) != 1:
        raise ValueError(f"{path}: rows have differing widths {sorted(width)}")
    return Dataset(np.array([r[1] for r in rows]), np.array([r[0] for r in rows]))


def split(ds: Dataset, query_frac: float, seed: int) -> tuple[Dataset, Dataset]:
    """Per-class random split into (train, query); every class keeps at least one training item."""
    rng = np.random.default_rng(seed)
    train_idx, query_idx = [], []
    for lab in np.unique(ds.labels):
        idx = np.flatnonzero(ds.labels == lab)
        idx = idx[rng.permutation(idx.size)]
        n_q = min(int(round(query_frac * idx.size)), idx.size - 1)
        query_idx.extend(idx[:n_q].tolist())
        train_idx.extend(idx[n_q:].tolist())
    return ds.subset(np.sort(train_idx)), ds.subset(np.sort(query_idx))
