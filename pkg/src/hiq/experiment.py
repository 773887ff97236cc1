"""Experiment configuration, evaluation and report assembly."""

from __future__ import annotations

import copy
import dataclasses
import hashlib
import json
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from hiq.core import ConfigError, HashConfig
from hiq.data import Dataset, gen_synthetic, read_csv, split
from hiq.retrieval import build_table, linear_scan, nmi, precision_at_k, query_batch, suf_from_counts
from hiq.trainer import TrainConfig, history_csv, make_model, train

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

REPORT_SCHEMA = "hiq-report"
REPORT_VERSION = 1
PRECISION_KS = (1, 4, 16)

DEFAULT_CONFIG = {
    "dataset": {"synthetic": {"n_classes": 8, "per_class": 100, "input_dim": 16, "cluster_sep": 8.0, "seed": 7}},
    "hash": {"d": 4, "k": 2, "k_s": 1, "alpha": 0.1, "beta": 0.1},
    "train": {"max_iter": 500, "n_classes": 8, "m": 2, "lr": 0.03, "seed": 7},
    "eval": {"query_frac": 0.2, "seed": 7},
}

_SYNTH_KEYS = {"n_classes", "per_class", "input_dim", "cluster_sep", "seed"}
_EVAL_KEYS = {"query_frac", "seed", "queries"}


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: dict
    hash: HashConfig
    train: TrainConfig
    eval: dict
    base_dir: Path

    def resolved(self) -> dict:
        return {
            "dataset": copy.deepcopy(self.dataset),
            "hash": self.hash.to_dict(),
            "train": self.train.to_dict(),
            "eval": dict(self.eval),
        }


def load_config_file(path) -> dict:
    """Parse a TOML or JSON config (chosen by suffix; JSON tried first otherwise)."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from None
    if path.suffix == ".toml":
        parsers = (tomllib.loads,)
    elif path.suffix == ".json":
        parsers = (json.loads,)
    else:
        parsers = (json.loads, tomllib.loads)
    for parse in parsers:
        try:
            raw = parse(text)
            break
        except (json.JSONDecodeError, tomllib.TOMLDecodeError) as exc:
            err = exc
    else:
        raise ConfigError(f"{path}: cannot parse config ({err})")
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a table")
    return raw


def _build(cls, section: str, values: dict, problems: list):
    allowed = {f.name for f in dataclasses.fields(cls)}
    for key in sorted(set(values) - allowed):
        problems.append(f"{section}.{key}: unknown field")
    try:
        return cls(**{k: v for k, v in values.items() if k in allowed})
    except ConfigError as exc:
        problems.extend(f"{section}: {msg}" for msg in str(exc).split("; "))
    except (TypeError, ValueError) as exc:
        problems.append(f"{section}: {exc}")
    return None


def resolve_config(raw: dict | None = None, base_dir=".") -> ExperimentConfig:
    """Overlay ``raw`` on the defaults section by section and validate every field.

    All problems are collected into one :class:`ConfigError`, each prefixed
    with its ``section.field`` path.
    """
    raw = raw or {}
    problems = []
    for key in sorted(set(raw) - set(DEFAULT_CONFIG)):
        problems.append(f"{key}: unknown section")
    merged = {}
    for name, default in DEFAULT_CONFIG.items():
        sec = raw.get(name, {})
        if not isinstance(sec, dict):
            problems.append(f"{name}: expected a table, got {type(sec).__name__}")
            sec = {}
        if name == "dataset" and sec:
            merged[name] = copy.deepcopy(sec)
        else:
            merged[name] = {**default, **sec}

    ds = merged["dataset"]
    if ("path" in ds) == ("synthetic" in ds):
        problems.append("dataset: give exactly one of 'path' or 'synthetic'")
    for key in sorted(set(ds) - {"path", "synthetic"}):
        problems.append(f"dataset.{key}: unknown field")
    if isinstance(ds.get("synthetic"), dict):
        syn = ds["synthetic"]
        for key in sorted(set(syn) - _SYNTH_KEYS):
            problems.append(f"dataset.synthetic.{key}: unknown field")
        for key in sorted(_SYNTH_KEYS - set(syn)):
            problems.append(f"dataset.synthetic.{key}: missing")
    elif "synthetic" in ds:
        problems.append("dataset.synthetic: expected a table")

    ev = merged["eval"]
    for key in sorted(set(ev) - _EVAL_KEYS):
        problems.append(f"eval.{key}: unknown field")
    q = ev.get("query_frac")
    if "queries" not in ev and not (isinstance(q, (int, float)) and 0 < q < 1):
        problems.append(f"eval.query_frac: must lie in (0, 1), got {q!r}")

    hcfg = _build(HashConfig, "hash", merged["hash"], problems)
    tcfg = _build(TrainConfig, "train", merged["train"], problems)
    if problems:
        raise ConfigError("; ".join(problems))
    return ExperimentConfig(merged["dataset"], hcfg, tcfg, ev, Path(base_dir))


def load_dataset(cfg: ExperimentConfig) -> tuple[Dataset, Dataset]:
    """``(train, queries)`` according to the dataset and eval sections."""
    ds = cfg.dataset
    if "path" in ds:
        full = read_csv(cfg.base_dir / ds["path"])
    else:
        syn = ds["synthetic"]
        full = gen_synthetic(int(syn["n_classes"]), int(syn["per_class"]), int(syn["input_dim"]),
                             float(syn["cluster_sep"]), int(syn["seed"]))
    if "queries" in cfg.eval:
        return full, read_csv(cfg.base_dir / cfg.eval["queries"])
    return split(full, float(cfg.eval["query_frac"]), int(cfg.eval["seed"]))


def content_hash(resolved: dict, *datasets: Dataset) -> str:
    """Git blob hash of the canonical config JSON followed by the raw dataset arrays."""
    body = json.dumps(resolved, sort_keys=True, separators=(",", ":")).encode()
    for ds in datasets:
        body += b"\n" + ds.labels.astype("<i8").tobytes() + ds.features.astype("<f8").tobytes()
    return hashlib.sha1(b"blob %d\0" % len(body) + body).hexdigest()


def evaluate(model, items: Dataset, queries: Dataset, hcfg: HashConfig) -> dict:
    """Retrieval metrics for ``queries`` against a table built on ``items``."""
    table = build_table(items.features, model, hcfg)
    rankings, counts = query_batch(table, queries.features, model)
    scan = [linear_scan(table.base_vectors, b) for b in model.base_embedding(queries.features)]
    out = {"suf": suf_from_counts(table.n_items, counts)}
    for k in PRECISION_KS:
        out[f"pr@{k}"] = precision_at_k(rankings, queries.labels, items.labels, k)
    out["pr@1_scan"] = precision_at_k(scan, queries.labels, items.labels, 1)
    out["nmi"] = nmi(table, items.labels) if hcfg.k_s == 1 else None
    out["n_items"] = table.n_items
    out["n_queries"] = len(queries)
    out["n_buckets_used"] = len(table.buckets)
    return out


def run_experiment(cfg: ExperimentConfig, ablate_remap: bool = False, backend: str | None = None):
    """Train, hash and evaluate; returns ``(report, {tag: history_csv_text}, {tag: model})``."""
    items, queries = load_dataset(cfg)
    resolved = cfg.resolved()
    variants = [("ours", cfg.train)]
    if ablate_remap:
        variants.append(("ours-r", dataclasses.replace(cfg.train, remap="disabled")))
    rows, histories, models = [], {}, {}
    for tag, tcfg in variants:
        model = make_model(tcfg, cfg.hash, items.input_dim)
        res = train(items, model, tcfg, cfg.hash, backend=backend)
        row = {"tag": tag, **evaluate(res.model, items, queries, cfg.hash)}
        row["config"] = {**resolved, "train": tcfg.to_dict()}
        rows.append(row)
        histories[tag] = history_csv(res.history, cfg.hash.k)
        models[tag] = res.model
    report = {
        "schema": REPORT_SCHEMA,
        "schema_version": REPORT_VERSION,
        "input_hash": content_hash(resolved, items, queries),
        "config": resolved,
        "rows": rows,
    }
    return report, histories, models


def default_config_toml() -> str:
    """The default experiment as TOML text (a starting point for ``--config``)."""
    lines = []
    for name in ("hash", "train", "eval"):
        lines.append(f"[{name}]")
        lines.extend(f"{k} = {json.dumps(v)}" for k, v in DEFAULT_CONFIG[name].items())
        lines.append("")
    lines.append("[dataset.synthetic]")
    lines.extend(f"{k} = {json.dumps(v)}" for k, v in DEFAULT_CONFIG["dataset"]["synthetic"].items())
    return "\n".join(lines) + "\n"


def json_safe(obj):
    """Replace non-finite floats so reports stay strict JSON."""
    if isinstance(obj, float) and not np.isfinite(obj):
        return None if np.isnan(obj) else ("inf" if obj > 0 else "-inf")
    if isinstance(obj, dict):
        return {k: json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [json_safe(v) for v in obj]
    return obj
