"""Alternating optimisation: exact per-batch code assignment, then one Adam step on the embedding."""

from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from hiq.core import ConfigError, EmbeddingBatch, HashConfig
from hiq.data import Dataset
from hiq.flownet import flow_cost_closed_form
from hiq.hashopt import REMAP_MODES, bound_gap, cascade_assign, class_means
from hiq.metric import LOSS_KINDS, total_embedding_loss

log = logging.getLogger(__name__)

MODEL_KINDS = ("linear", "one_hidden")
CHECKPOINT_FORMAT = "hiq-checkpoint"
CHECKPOINT_VERSION = 1


class TrainingDiverged(RuntimeError):
    def __init__(self, message: str, snapshot: dict):
        super().__init__(message)
        self.snapshot = snapshot


class EmbeddingModel:
    """Frozen-or-trainable base map followed by a projection head onto ``d * k`` activations.

    ``base_embedding(x) = x @ Wb + bb`` is what reranking uses. The head is
    affine (``linear``) or one tanh hidden layer (``one_hidden``).
    """

    def __init__(self, kind: str, params: dict):
        if kind not in MODEL_KINDS:
            raise ValueError(f"unknown model kind {kind!r}; expected one of {MODEL_KINDS}")
        self.kind = kind
        self.params = {k: np.array(v, dtype=np.float64) for k, v in params.items()}

    @classmethod
    def create(cls, kind: str, input_dim: int, out_dim: int, hidden: int = 32,
               base_dim: int | None = None, seed: int = 0) -> "EmbeddingModel":
        rng = np.random.default_rng(seed)
        e = input_dim if base_dim is None else base_dim
        if e == input_dim:
            wb = np.eye(input_dim)
        else:
            wb = rng.normal(size=(input_dim, e)) / np.sqrt(input_dim)
        params = {"Wb": wb, "bb": np.zeros(e)}
        if kind == "linear":
            params["W"] = rng.normal(size=(e, out_dim)) / np.sqrt(e)
            params["b"] = np.zeros(out_dim)
        else:
            params["W1"] = rng.normal(size=(e, hidden)) / np.sqrt(e)
            params["b1"] = np.zeros(hidden)
            params["W2"] = rng.normal(size=(hidden, out_dim)) / np.sqrt(hidden)
            params["b2"] = np.zeros(out_dim)
        return cls(kind, params)

    @property
    def base_dim(self) -> int:
        return self.params["bb"].size

    @property
    def out_dim(self) -> int:
        return (self.params["b"] if self.kind == "linear" else self.params["b2"]).size

    def base_embedding(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x, dtype=np.float64) @ self.params["Wb"] + self.params["bb"]

    def forward(self, x: np.ndarray) -> np.ndarray:
        return self._forward(x)[0]

    def _forward(self, x):
        p = self.params
        e = self.base_embedding(x)
        if self.kind == "linear":
            return e @ p["W"] + p["b"], (e,)
        hid = np.tanh(e @ p["W1"] + p["b1"])
        return hid @ p["W2"] + p["b2"], (e, hid)

    def backward(self, x: np.ndarray, grad_out: np.ndarray) -> dict:
        """Parameter gradients of ``sum(grad_out * forward(x))``."""
        x = np.asarray(x, dtype=np.float64)
        p = self.params
        _, cache = self._forward(x)
        g = {}
        if self.kind == "linear":
            (e,) = cache
            g["W"] = e.T @ grad_out
            g["b"] = grad_out.sum(axis=0)
            g_e = grad_out @ p["W"].T
        else:
            e, hid = cache
            g["W2"] = hid.T @ grad_out
            g["b2"] = grad_out.sum(axis=0)
            g_pre = (grad_out @ p["W2"].T) * (1.0 - hid**2)
            g["W1"] = e.T @ g_pre
            g["b1"] = g_pre.sum(axis=0)
            g_e = g_pre @ p["W1"].T
        g["Wb"] = x.T @ g_e
        g["bb"] = g_e.sum(axis=0)
        return g

    def copy(self) -> "EmbeddingModel":
        return EmbeddingModel(self.kind, {k: v.copy() for k, v in self.params.items()})

    def to_dict(self) -> dict:
        return {"kind": self.kind, "params": {k: v.tolist() for k, v in self.params.items()}}

    @classmethod
    def from_dict(cls, rec: dict) -> "EmbeddingModel":
        return cls(rec["kind"], rec["params"])


@dataclass(frozen=True)
class TrainConfig:
    max_iter: int = 500
    n_classes: int = 8
    m: int = 2
    lr: float = 3e-2
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    lr_milestones: tuple = ()
    lr_decay: float = 0.3
    loss_kind: str = "npairs"
    margin: float = 1.0
    l2_reg: float = 0.0
    remap: str = "per_level"
    freeze_base: bool = True
    model_kind: str = "linear"
    hidden: int = 32
    base_dim: int | None = None
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "lr_milestones", tuple(int(t) for t in self.lr_milestones))
        problems = []
        if self.max_iter < 0:
            problems.append(f"max_iter must be non-negative, got {self.max_iter}")
        if self.n_classes < 2:
            problems.append(f"n_classes must be at least 2, got {self.n_classes}")
        if self.m < 2:
            problems.append(f"m must be at least 2, got {self.m}")
        if not self.lr > 0:
            problems.append(f"lr must be positive, got {self.lr}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1 and self.eps > 0):
            problems.append("Adam parameters need 0 <= beta1, beta2 < 1 and eps > 0")
        if not 0 < self.lr_decay <= 1:
            problems.append(f"lr_decay must lie in (0, 1], got {self.lr_decay}")
        if self.loss_kind not in LOSS_KINDS:
            problems.append(f"loss_kind must be one of {LOSS_KINDS}, got {self.loss_kind!r}")
        if self.remap not in REMAP_MODES:
            problems.append(f"remap must be one of {REMAP_MODES}, got {self.remap!r}")
        if self.model_kind not in MODEL_KINDS:
            problems.append(f"model_kind must be one of {MODEL_KINDS}, got {self.model_kind!r}")
        if self.hidden < 1 or (self.base_dim is not None and self.base_dim < 1):
            problems.append("hidden and base_dim must be positive")
        if problems:
            raise ConfigError("; ".join(problems))

    def to_dict(self) -> dict:
        out = asdict(self)
        out["lr_milestones"] = list(self.lr_milestones)
        return out

    def lr_at(self, it: int) -> float:
        return self.lr * self.lr_decay ** sum(it >= t for t in self.lr_milestones)


def make_model(tcfg: TrainConfig, hcfg: HashConfig, input_dim: int) -> EmbeddingModel:
    return EmbeddingModel.create(tcfg.model_kind, input_dim, hcfg.d * hcfg.k, tcfg.hidden, tcfg.base_dim, tcfg.seed)


def sample_minibatch(dataset: Dataset, n_c: int, m: int, rng: np.random.Generator):
    """``n_c`` distinct classes with ``m`` items each, drawn without replacement.

    Returns ``(features, labels)`` grouped class by class.
    """
    classes, counts = np.unique(dataset.labels, return_counts=True)
    eligible = classes[counts >= m]
    if n_c > eligible.size:
        raise ValueError(f"need {n_c} classes with at least {m} items, dataset has {eligible.size}")
    chosen = rng.choice(eligible, size=n_c, replace=False)
    idx = []
    for c in chosen:
        members = np.flatnonzero(dataset.labels == c)
        idx.extend(rng.choice(members, size=m, replace=False).tolist())
    idx = np.array(idx, dtype=np.int64)
    return dataset.features[idx], dataset.labels[idx]


@dataclass
class TrainResult:
    model: EmbeddingModel
    history: list = field(default_factory=list)
    rng_state: dict = field(default_factory=dict)


def _adam(model, grads, state, tcfg: TrainConfig, lr: float, t: int):
    for name, g in grads.items():
        if tcfg.freeze_base and name in ("Wb", "bb"):
            continue
        m, v = state.setdefault(name, (np.zeros_like(g), np.zeros_like(g)))
        m = tcfg.beta1 * m + (1 - tcfg.beta1) * g
        v = tcfg.beta2 * v + (1 - tcfg.beta2) * g * g
        state[name] = (m, v)
        m_hat = m / (1 - tcfg.beta1**t)
        v_hat = v / (1 - tcfg.beta2**t)
        model.params[name] -= lr * m_hat / (np.sqrt(v_hat) + tcfg.eps)


def _check_monotone(level, means, memory, cfg):
    """The solved codes must score no worse than any other feasible assignment.

    Compares against each class's most recent code (top activations for
    classes not seen before), evaluated on the current means.
    """
    s_v = cfg.level_sparsity(level.level)
    ref = np.zeros_like(level.class_codes)
    for p, c in enumerate(level.class_ids):
        prev = memory.get(int(c))
        if prev is None or prev.sum() != s_v:
            prev = np.zeros(means.d, dtype=np.int8)
            prev[np.argsort(-means.means[p], kind="stable")[:s_v]] = 1
        ref[p] = prev
    ref_cost = flow_cost_closed_form(ref, means, level.partition, cfg, fixed=True)
    if level.objective > ref_cost:
        raise RuntimeError(
            f"level {level.level}: solved objective {level.objective} exceeds a feasible assignment's {ref_cost}"
        )
    for p, c in enumerate(level.class_ids):
        memory[int(c)] = level.class_codes[p].copy()


def _snapshot(model, it, loss, lr) -> dict:
    return {
        "iteration": it,
        "loss": loss,
        "lr": lr,
        "param_norms": {k: float(np.linalg.norm(v)) for k, v in model.params.items()},
    }


def train(dataset: Dataset, model: EmbeddingModel, tcfg: TrainConfig, hcfg: HashConfig,
          backend: str | None = None) -> TrainResult:
    """Run ``tcfg.max_iter`` alternating steps on a copy of ``model``.

    Each step samples a batch, assigns codes level by level on the current
    activations, then takes one Adam step on the summed metric loss.
    """
    if model.out_dim != hcfg.d * hcfg.k:
        raise ValueError(f"model emits {model.out_dim} activations, config needs d*k = {hcfg.d * hcfg.k}")
    model = model.copy()
    rng = np.random.default_rng(tcfg.seed)
    adam_state: dict = {}
    memory = [dict() for _ in range(hcfg.k)]
    history = []
    for it in range(tcfg.max_iter):
        x, y = sample_minibatch(dataset, tcfg.n_classes, tcfg.m, rng)
        act = model.forward(x)
        lr = tcfg.lr_at(it)
        if not np.isfinite(act).all():
            raise TrainingDiverged(f"activations became non-finite at iteration {it}",
                                   _snapshot(model, it, float("nan"), lr))
        batch = EmbeddingBatch(act, y, hcfg.d)
        cas = cascade_assign(batch, hcfg, remap=tcfg.remap, backend=backend)

        g_hat, gap = 0.0, 0.0
        row = {"iteration": it}
        for v, level in enumerate(cas.levels, start=1):
            means = class_means(batch, v)
            _check_monotone(level, means, memory[v - 1], hcfg)
            g_hat += level.objective / hcfg.cost_scale
            gap += bound_gap(batch, means, v, hcfg.level_sparsity(v))
            row[f"occupancy_{v}"] = len(set(level.prefix))

        out = total_embedding_loss(batch, cas.levels, tcfg.loss_kind, tcfg.margin, tcfg.l2_reg, rotation=it)
        if not np.isfinite(out.value) or not np.isfinite(out.grad).all():
            raise TrainingDiverged(f"loss became non-finite at iteration {it}",
                                   _snapshot(model, it, float(out.value), lr))
        grads = model.backward(x, out.grad)
        _adam(model, grads, adam_state, tcfg, lr, it + 1)

        row.update(loss=out.value, g_hat=g_hat, bound_gap=gap, lr=lr)
        history.append(row)
        if it % 100 == 0:
            log.debug("iter %d loss %.5f g_hat %.4f", it, out.value, g_hat)
    return TrainResult(model, history, rng.bit_generator.state)


HISTORY_COLUMNS = ("iteration", "loss", "g_hat", "bound_gap", "lr")


def history_csv(history: list, k: int) -> str:
    """Plot-ready CSV text; floats use ``repr`` so equal runs give equal bytes."""
    cols = list(HISTORY_COLUMNS) + [f"occupancy_{v}" for v in range(1, k + 1)]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for row in history:
        w.writerow([repr(row[c]) if isinstance(row[c], float) else row[c] for c in cols])
    return buf.getvalue()


def save_checkpoint(path, model: EmbeddingModel, tcfg: TrainConfig, hcfg: HashConfig,
                    rng_state: dict | None = None, iteration: int = 0) -> None:
    rec = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "iteration": iteration,
        "model": model.to_dict(),
        "train_config": tcfg.to_dict(),
        "hash_config": hcfg.to_dict(),
        "rng_state": rng_state or {},
    }
    with open(path, "w") as fh:
        json.dump(rec, fh)


def load_checkpoint(path) -> tuple[EmbeddingModel, TrainConfig, HashConfig, dict]:
    with open(path) as fh:
        rec = json.load(fh)
    if rec.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path} is not a checkpoint")
    if rec.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {rec.get('version')}")
    return (
        EmbeddingModel.from_dict(rec["model"]),
        TrainConfig(**rec["train_config"]),
        HashConfig(**rec["hash_config"]),
        rec,
    )
