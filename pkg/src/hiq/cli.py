"""Command-line entry point.

Exit codes: 0 success, 1 configuration or usage error, 2 verification
failure, 3 runtime error. ``HIQ_THREADS`` caps the BLAS thread pools; it is
applied before numpy is imported.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

EXIT_OK, EXIT_CONFIG, EXIT_VERIFY, EXIT_RUNTIME = 0, 1, 2, 3
_THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")

log = logging.getLogger("hiq")


class UsageError(Exception):
    pass


class VerificationFailed(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _apply_thread_cap() -> None:
    raw = os.environ.get("HIQ_THREADS")
    if raw is None:
        return
    try:
        n = int(raw)
    except ValueError:
        n = 0
    if n < 1:
        raise UsageError(f"HIQ_THREADS must be a positive integer, got {raw!r}")
    for var in _THREAD_VARS:
        os.environ[var] = str(n)


def _write_json(obj, path) -> None:
    from hiq.experiment import json_safe

    text = json.dumps(json_safe(obj), indent=2, sort_keys=True) + "\n"
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def _experiment_config(args):
    from hiq.experiment import load_config_file, resolve_config

    if args.config:
        raw = load_config_file(args.config)
        base = Path(args.config).resolve().parent
    else:
        raw, base = {}, Path.cwd()
    if args.seed is not None:
        raw = {**raw, "train": {**raw.get("train", {}), "seed": args.seed}}
    return resolve_config(raw, base)


def cmd_gen(args):
    from hiq.data import gen_synthetic, write_csv

    ds = gen_synthetic(args.n_classes, args.per_class, args.input_dim, args.sep, args.seed)
    write_csv(ds, args.out)
    log.info("wrote %d rows to %s", len(ds), args.out)


def cmd_train(args):
    from hiq.experiment import load_dataset
    from hiq.trainer import history_csv, make_model, save_checkpoint, train

    cfg = _experiment_config(args)
    items, _ = load_dataset(cfg)
    model = make_model(cfg.train, cfg.hash, items.input_dim)
    res = train(items, model, cfg.train, cfg.hash, backend=args.backend)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(out / "checkpoint.json", res.model, cfg.train, cfg.hash, res.rng_state, cfg.train.max_iter)
    (out / "history.csv").write_text(history_csv(res.history, cfg.hash.k))
    log.info("checkpoint and history written to %s", out)


def cmd_build_table(args):
    from hiq.data import read_csv
    from hiq.retrieval import build_table, export_table
    from hiq.trainer import load_checkpoint

    model, _, hcfg, _ = load_checkpoint(args.checkpoint)
    table = build_table(read_csv(args.data).features, model, hcfg)
    with open(args.out, "w") as fh:
        export_table(table, fh)
    log.info("%d items in %d buckets", table.n_items, len(table.buckets))


def cmd_query(args):
    from hiq.data import read_csv
    from hiq.retrieval import import_table, query_batch
    from hiq.trainer import load_checkpoint

    model, _, _, _ = load_checkpoint(args.checkpoint)
    with open(args.table) as fh:
        table = import_table(fh)
    queries = read_csv(args.data)
    rankings, counts = query_batch(table, queries.features, model, top_k=args.top_k)
    out = sys.stdout if args.out in (None, "-") else open(args.out, "w")
    try:
        for i, (ids, n) in enumerate(zip(rankings, counts)):
            out.write(json.dumps({"query": i, "retrieved": int(n), "ids": ids.tolist()}) + "\n")
    finally:
        if out is not sys.stdout:
            out.close()


def cmd_bench(args):
    from hiq.data import read_csv
    from hiq.experiment import evaluate
    from hiq.trainer import load_checkpoint

    model, _, hcfg, _ = load_checkpoint(args.checkpoint)
    metrics = evaluate(model, read_csv(args.items), read_csv(args.queries), hcfg)
    _write_json(metrics, args.out)


def cmd_verify_mcf(args):
    from hiq.oracle import verify_mcf

    report = verify_mcf(args.trials, args.seed, backend=args.backend)
    _write_json(report, args.out)
    if not report["ok"]:
        raise VerificationFailed(f"{len(report['failed'])} of {args.trials} trials disagree with the oracle")


def cmd_bench_mcf(args):
    from hiq.scaling import scaling_sweep

    sweep = scaling_sweep(
        n_c_values=tuple(args.n_c), d_values=tuple(args.d), reps=args.reps, seed=args.seed,
        backend=args.backend, peak=args.peak, partition=args.partition,
    )
    _write_json(sweep, args.out)


def cmd_run(args):
    from hiq.experiment import run_experiment
    from hiq.oracle import verify_mcf

    cfg = _experiment_config(args)
    report, histories, _ = run_experiment(cfg, ablate_remap=args.ablate_remap, backend=args.backend)
    if args.verify_mcf:
        check = verify_mcf(args.verify_mcf, cfg.train.seed, backend=args.backend)
        report["verify_mcf"] = {"trials": check["trials"], "passed": check["passed"], "ok": check["ok"]}
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(report, out / "report.json")
    for tag, text in histories.items():
        name = "history.csv" if tag == "ours" else f"history-{tag}.csv"
        (out / name).write_text(text)
    for row in report["rows"]:
        log.info("%s: suf %.3f pr@1 %.3f nmi %s", row["tag"], row["suf"], row["pr@1"], row["nmi"])
    if args.verify_mcf and not report["verify_mcf"]["ok"]:
        raise VerificationFailed(f"flow solver failed {args.verify_mcf - check['passed']} oracle trials")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="hiq", description="Learn and evaluate hierarchical hash codes.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def backend_opt(sp):
        sp.add_argument("--backend", choices=("compiled", "python"), default=None,
                        help="flow kernel (default: compiled when available)")

    sp = sub.add_parser("gen", help="write a synthetic Gaussian-cluster CSV")
    sp.add_argument("--n-classes", type=int, default=8)
    sp.add_argument("--per-class", type=int, default=100)
    sp.add_argument("--input-dim", type=int, default=16)
    sp.add_argument("--sep", type=float, default=8.0)
    sp.add_argument("--seed", type=int, default=7)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_gen)

    sp = sub.add_parser("train", help="train a model and write a checkpoint")
    sp.add_argument("--config")
    sp.add_argument("--out", required=True, help="output directory")
    sp.add_argument("--seed", type=int)
    backend_opt(sp)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("build-table", help="hash a CSV of items into a table export")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--data", required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_build_table)

    sp = sub.add_parser("query", help="ranked retrieval for each row of a CSV")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--table", required=True)
    sp.add_argument("--data", required=True)
    sp.add_argument("--top-k", type=int, default=10)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_query)

    sp = sub.add_parser("bench", help="retrieval metrics of a checkpoint on labelled items and queries")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--items", required=True)
    sp.add_argument("--queries", required=True)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_bench)

    sp = sub.add_parser("verify-mcf", help="check the flow solver against exhaustive search")
    sp.add_argument("--trials", type=int, default=200)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out")
    backend_opt(sp)
    sp.set_defaults(func=cmd_verify_mcf)

    sp = sub.add_parser("bench-mcf", help="flow solve time against class count and code width")
    sp.add_argument("--n-c", type=int, nargs="+", default=[64, 128, 256, 512])
    sp.add_argument("--d", type=int, nargs="+", default=[16, 32, 64, 128])
    sp.add_argument("--reps", type=int, default=21)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--peak", type=float, default=4.0)
    sp.add_argument("--partition", choices=("singletons", "by_dim"), default="singletons")
    sp.add_argument("--out")
    backend_opt(sp)
    sp.set_defaults(func=cmd_bench_mcf)

    sp = sub.add_parser("run", help="train, evaluate and write a report")
    sp.add_argument("--config")
    sp.add_argument("--out", required=True, help="output directory")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--ablate-remap", action="store_true", help="add a run with label remapping disabled")
    sp.add_argument("--verify-mcf", type=int, default=0, metavar="N", help="also run N oracle trials")
    backend_opt(sp)
    sp.set_defaults(func=cmd_run)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        _apply_thread_cap()
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_CONFIG
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(levelname)s %(message)s")

    from hiq.core import ConfigError

    try:
        args.func(args)
    except (ConfigError, UsageError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except VerificationFailed as exc:
        print(f"verification failed: {exc}", file=sys.stderr)
        return EXIT_VERIFY
    except Exception as exc:  # noqa: BLE001 - any other failure is a runtime error
        log.debug("traceback", exc_info=True)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
