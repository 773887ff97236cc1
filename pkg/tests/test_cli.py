import json
import os
import subprocess
import sys

import pytest

from hiq.cli import main
from hiq.core import ConfigError
from hiq.experiment import (
    DEFAULT_CONFIG,
    default_config_toml,
    load_config_file,
    resolve_config,
    run_experiment,
)

FAST = {"train": {"max_iter": 40}}


def write_toml(path, text):
    path.write_text(text)
    return str(path)


def test_default_config_resolves():
    cfg = resolve_config()
    assert cfg.hash.d == 4 and cfg.train.max_iter == 500 and cfg.train.lr == 0.03


def test_default_toml_round_trip(tmp_path):
    p = write_toml(tmp_path / "c.toml", default_config_toml())
    raw = load_config_file(p)
    assert raw["dataset"] == DEFAULT_CONFIG["dataset"]
    assert resolve_config(raw).resolved() == resolve_config().resolved()


def test_json_config(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"hash": {"d": 8}}))
    assert resolve_config(load_config_file(p)).hash.d == 8


def test_field_level_errors():
    with pytest.raises(ConfigError) as exc:
        resolve_config({"hash": {"k_s": 9, "gamma": 1}, "train": {"lr": -1}, "extra": {}, "eval": {"query_frac": 2}})
    msg = str(exc.value)
    for part in ("hash.gamma: unknown field", "hash: k_s exceeds d", "train: lr must be positive",
                 "extra: unknown section", "eval.query_frac"):
        assert part in msg


def test_dataset_section_errors():
    with pytest.raises(ConfigError, match="exactly one"):
        resolve_config({"dataset": {"path": "a.csv", "synthetic": {}}})
    with pytest.raises(ConfigError, match="synthetic.seed: missing"):
        resolve_config({"dataset": {"synthetic": {"n_classes": 2, "per_class": 3, "input_dim": 2, "cluster_sep": 1}}})


def test_unparseable_config(tmp_path):
    with pytest.raises(ConfigError, match="cannot parse"):
        load_config_file(write_toml(tmp_path / "c.toml", "[hash\n"))
    with pytest.raises(ConfigError):
        load_config_file(tmp_path / "missing.toml")


def test_report_schema():
    report, histories, _ = run_experiment(resolve_config(FAST), ablate_remap=True)
    assert report["schema"] == "hiq-report" and report["schema_version"] == 1
    assert len(report["input_hash"]) == 40
    assert [r["tag"] for r in report["rows"]] == ["ours", "ours-r"]
    for row in report["rows"]:
        assert {"suf", "pr@1", "pr@4", "pr@16", "nmi", "n_items", "n_queries", "config"} <= set(row)
    assert report["rows"][1]["config"]["train"]["remap"] == "disabled"
    assert set(histories) == {"ours", "ours-r"}
    again, _, _ = run_experiment(resolve_config(FAST))
    assert again["input_hash"] == report["input_hash"]
    other, _, _ = run_experiment(resolve_config({"train": {"max_iter": 40, "seed": 1}}))
    assert other["input_hash"] != report["input_hash"]


def test_run_command(tmp_path):
    cfg = write_toml(tmp_path / "c.toml", "[train]\nmax_iter = 40\n")
    out = tmp_path / "out"
    assert main(["run", "--config", cfg, "--out", str(out), "--ablate-remap", "--verify-mcf", "200"]) == 0
    report = json.loads((out / "report.json").read_text())
    assert report["verify_mcf"] == {"trials": 200, "passed": 200, "ok": True}
    assert [r["tag"] for r in report["rows"]] == ["ours", "ours-r"]
    header = (out / "history.csv").read_text().splitlines()[0]
    assert header.startswith("iteration,loss,g_hat,bound_gap")
    assert (out / "history-ours-r.csv").exists()


def test_pipeline_commands(tmp_path, capsys):
    data, ck = tmp_path / "d.csv", tmp_path / "ck"
    assert main(["gen", "--n-classes", "4", "--per-class", "20", "--input-dim", "6", "--out", str(data)]) == 0
    cfg = write_toml(tmp_path / "c.toml", f'[dataset]\npath = "d.csv"\n[train]\nmax_iter = 30\nn_classes = 4\n')
    assert main(["train", "--config", cfg, "--out", str(ck), "--seed", "3"]) == 0
    assert json.loads((ck / "checkpoint.json").read_text())["train_config"]["seed"] == 3
    table = tmp_path / "t.jsonl"
    assert main(["build-table", "--checkpoint", str(ck / "checkpoint.json"), "--data", str(data),
                 "--out", str(table)]) == 0
    capsys.readouterr()
    assert main(["query", "--checkpoint", str(ck / "checkpoint.json"), "--table", str(table),
                 "--data", str(data), "--top-k", "2"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert len(lines) == 80
    first = json.loads(lines[0])
    assert first["query"] == 0 and first["ids"][0] == 0 and first["retrieved"] >= 1
    assert main(["bench", "--checkpoint", str(ck / "checkpoint.json"), "--items", str(data),
                 "--queries", str(data)]) == 0
    assert json.loads(capsys.readouterr().out)["n_items"] == 80


def test_gen_is_deterministic(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    main(["gen", "--out", str(a)])
    main(["gen", "--out", str(b)])
    assert a.read_bytes() == b.read_bytes() and len(a.read_text().splitlines()) == 801


def test_verify_and_bench_mcf(capsys):
    assert main(["verify-mcf", "--trials", "30", "--seed", "4"]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep["passed"] == 30 and rep["ok"]
    assert main(["bench-mcf", "--n-c", "8", "16", "--d", "4", "8", "--reps", "2"]) == 0
    sweep = json.loads(capsys.readouterr().out)
    assert len(sweep["n_c"]["ratios"]) == 1 and len(sweep["d"]["seconds"]) == 2


def test_verification_failure_exit_code(monkeypatch):
    import hiq.oracle

    monkeypatch.setattr(hiq.oracle, "verify_mcf", lambda *a, **k: {"ok": False, "failed": [{}], "passed": 0})
    assert main(["verify-mcf", "--trials", "1"]) == 2


def test_exit_codes(tmp_path):
    assert main(["run", "--out", str(tmp_path), "--config", str(tmp_path / "nope.toml")]) == 1
    bad = write_toml(tmp_path / "b.toml", "[train]\nmax_iter = -1\n")
    assert main(["run", "--config", bad, "--out", str(tmp_path)]) == 1
    assert main(["frobnicate"]) == 1
    assert main(["build-table", "--checkpoint", str(tmp_path / "none.json"), "--data", "x", "--out", "y"]) == 3


def test_thread_cap(monkeypatch, tmp_path):
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        monkeypatch.setenv(var, "1")  # restored after the test
    monkeypatch.setenv("HIQ_THREADS", "zero")
    assert main(["gen", "--out", str(tmp_path / "a.csv")]) == 1
    monkeypatch.setenv("HIQ_THREADS", "2")
    assert main(["gen", "--out", str(tmp_path / "a.csv")]) == 0
    assert os.environ["OMP_NUM_THREADS"] == "2"


def test_console_script_entry():
    out = subprocess.run([sys.executable, "-m", "hiq.cli", "--help"], capture_output=True, text=True)
    assert out.returncode == 0 and "verify-mcf" in out.stdout
