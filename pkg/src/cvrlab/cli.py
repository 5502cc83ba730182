"""Command-line front end: gen / train / eval / ablate / gradcheck.

Machine-readable JSON goes to standard output, progress and tables to
standard error.  Every command first writes a run_manifest.json into its
output directory (command line, fully resolved config, content hashes of
any consumed dataset manifests, timestamp) so an artifact can always be
traced back to the invocation that made it.

Exit codes: 0 success, 2 usage or configuration error, 3 data error,
4 numerical failure.
"""

from __future__ import annotations

import argparse
import datetime
import hashlib
import json
import os
import sys

import numpy as np

from . import __version__
from .autodiff.checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .autodiff.tensor import NumericsError, ShapeError
from .gradcheck import run_gradcheck
from .model import PanelModel
from .seeds import Stream
from .taskgen.dataset import (DataError, generate_split, load_dataset,
                              write_dataset)
from .taskgen.rules import rule_names
from .training import (ABLATION_GRIDS, TrainConfig, TrainHistory, ablate,
                       evaluate, train, write_report)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

CHECKPOINT_NAME = "checkpoint.ckpt"
CONFIG_NAME = "config.json"


class UsageError(ValueError):
    pass


def _note(message: str) -> None:
    print(message, file=sys.stderr)


def _emit(payload: dict) -> None:
    print(json.dumps(payload, indent=2, sort_keys=True))


def _sha256(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _dataset_hashes(paths: dict) -> dict:
    return {name: _sha256(os.path.join(path, "manifest.jsonl"))
            for name, path in paths.items()}


def _write_run_manifest(out_dir, argv: list, config: dict,
                        dataset_hashes: dict | None) -> None:
    os.makedirs(out_dir, exist_ok=True)
    payload = {
        "tool": f"cvrlab {__version__}",
        "command": argv,
        "config": config,
        "dataset_manifest_sha256": dataset_hashes,
        "created_utc": datetime.datetime.now(datetime.timezone.utc).isoformat(),
    }
    with open(os.path.join(out_dir, "run_manifest.json"), "w", encoding="ascii") as fh:
        fh.write(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _parse_rules(spec: str) -> list[str]:
    known = set(rule_names())
    rules = [r.strip() for r in spec.split(",") if r.strip()]
    if not rules:
        raise UsageError("no rules given")
    for rule in rules:
        if rule not in known:
            raise UsageError(f"unknown rule {rule!r}; run with --rules "
                             f"{','.join(sorted(known))}")
    return rules


def _train_config(args) -> TrainConfig:
    return TrainConfig(epochs=args.epochs, early_stop_patience=args.patience,
                       batch_size=args.batch_size, lr=args.lr,
                       weight_decay=args.weight_decay,
                       contrast_weight=args.contrast_weight,
                       num_blocks=args.num_blocks, seed=args.seed,
                       resolution=args.res, contrast_mode=args.contrast_mode,
                       head=args.head, context_mode=args.context_mode,
                       eval_permutation=args.eval_permutation,
                       stop_at_accuracy=args.stop_at_accuracy)


def _load_split(data_dir, split: str | None):
    path = data_dir if split is None else os.path.join(data_dir, split)
    return path, load_dataset(path)


# ---------------------------------------------------------------------------


def cmd_gen(args, argv) -> int:
    rules = _parse_rules(args.rules)
    counts = {"train": args.n_train, "val": args.n_val, "test": args.n_test}
    for name, count in counts.items():
        if count < 0:
            raise UsageError(f"--n-{name} must be nonnegative, got {count}")
    if os.path.isdir(args.out) and os.listdir(args.out) and not args.force:
        raise UsageError(f"output directory {args.out!r} is not empty; "
                         "pass --force to overwrite")

    config = {"rules": rules, "seed": args.seed, "res": args.res, **{
        f"n_{k}": v for k, v in counts.items()}}
    _write_run_manifest(args.out, argv, config, dataset_hashes=None)

    written = {}
    start = 0
    for split, per_rule in counts.items():
        if per_rule == 0:
            continue
        ds = generate_split(rules, per_rule, master_seed=args.seed,
                            resolution=args.res, start_index=start)
        write_dataset(ds, os.path.join(args.out, split))
        written[split] = len(ds)
        start += len(ds)
        _note(f"{split}: {len(ds)} panels -> {os.path.join(args.out, split)}")
    _emit({"out": args.out, "rules": rules, "seed": args.seed,
           "res": args.res, "panels": written})
    return EXIT_OK


def cmd_train(args, argv) -> int:
    cfg = _train_config(args)
    train_path, train_ds = _load_split(args.data, "train")
    val_path, val_ds = _load_split(args.data, "val")
    hashes = _dataset_hashes({"train": train_path, "val": val_path})
    _write_run_manifest(args.out, argv, cfg.to_dict(), hashes)

    model, history, best_state = train(cfg, train_ds, val_ds, log=_note)
    history.to_csv(os.path.join(args.out, "history.csv"))
    save_checkpoint(os.path.join(args.out, CHECKPOINT_NAME), best_state)
    with open(os.path.join(args.out, CONFIG_NAME), "w", encoding="ascii") as fh:
        fh.write(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
    _emit({"out": args.out,
           "epochs_run": len(history.records),
           "best_epoch": history.best_epoch,
           "best_val_accuracy": history.best_accuracy})
    return EXIT_OK


def _load_run(run_dir) -> tuple[TrainConfig, PanelModel]:
    config_path = os.path.join(run_dir, CONFIG_NAME)
    if not os.path.exists(config_path):
        raise DataError(f"{run_dir}: no {CONFIG_NAME}; is this a train output directory?")
    with open(config_path, encoding="ascii") as fh:
        cfg = TrainConfig.from_dict(json.load(fh))
    state = load_checkpoint(os.path.join(run_dir, CHECKPOINT_NAME))
    model = PanelModel(cfg.model_config(), Stream(0))
    model.load_state(state)
    return cfg, model


def cmd_eval(args, argv) -> int:
    cfg, model = _load_run(args.run)
    data_path, ds = _load_split(args.data, args.split)
    # Default to a subdirectory of the run so the training manifest
    # survives; every output directory keeps exactly one manifest.
    suffix = "eval" if args.split is None else f"eval-{args.split}"
    out_dir = args.out or os.path.join(args.run, suffix)
    _write_run_manifest(out_dir, argv, cfg.to_dict(),
                        _dataset_hashes({"eval": data_path}))
    metrics = evaluate(model, ds, cfg.batch_size)
    blob = json.dumps(metrics, indent=2, sort_keys=True) + "\n"
    with open(os.path.join(out_dir, "metrics.json"), "w", encoding="ascii") as fh:
        fh.write(blob)
    for rule, entry in metrics["per_rule"].items():
        _note(f"{rule:<24} n={entry['n']:<6} accuracy={entry['accuracy']:.4f}")
    _note(f"{'overall':<24} n={metrics['n_panels']:<6} "
          f"accuracy={metrics['accuracy']:.4f}")
    _emit(metrics)
    return EXIT_OK


def cmd_ablate(args, argv) -> int:
    if args.grid not in ABLATION_GRIDS:
        raise UsageError(f"unknown grid {args.grid!r}; choose from "
                         f"{', '.join(sorted(ABLATION_GRIDS))}")
    try:
        seeds = tuple(int(s) for s in args.seeds.split(","))
    except ValueError as exc:
        raise UsageError(f"--seeds wants a comma-separated integer list, "
                         f"got {args.seeds!r}") from exc
    cfg = _train_config(args)
    train_path, train_ds = _load_split(args.data, "train")
    val_path, val_ds = _load_split(args.data, "val")
    test_path, test_ds = _load_split(args.data, "test")
    hashes = _dataset_hashes({"train": train_path, "val": val_path,
                              "test": test_path})
    config = dict(cfg.to_dict(), grid=args.grid, seeds=list(seeds))
    _write_run_manifest(args.out, argv, config, hashes)

    rows = ablate(cfg, args.grid, train_ds, val_ds, test_ds, seeds=seeds, log=_note)
    report_path = os.path.join(args.out, "report.csv")
    write_report(report_path, rows)
    for row in rows:
        _note(f"{row['cell']:<14} seed={row['seed']} "
              f"val={row['val_accuracy']:.4f} test={row['test_accuracy']:.4f}")
    _emit({"grid": args.grid, "report": report_path, "rows": rows})
    return EXIT_OK


def cmd_gradcheck(args, argv) -> int:
    report = run_gradcheck(args.dtype, corrupt_op=args.corrupt_op)
    for check in report["checks"]:
        state = "ok" if check["passed"] else "FAIL"
        _note(f"{check['op']:<20} max_rel_error={check['max_rel_error']:.3e}  {state}")
    _emit(report)
    if not report["passed"]:
        _note(f"gradient check failed for: {', '.join(report['failed_ops'])}")
        return EXIT_NUMERIC
    return EXIT_OK


# ---------------------------------------------------------------------------


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--patience", type=int, default=20)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--weight-decay", type=float, default=1e-4)
    p.add_argument("--contrast-weight", type=float, default=0.1,
                   help="weight of the contrastive term in the total loss")
    p.add_argument("--num-blocks", type=int, default=3,
                   help="stacked reasoning blocks (K)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--res", type=int, default=64)
    p.add_argument("--contrast-mode", default="weak-strong",
                   choices=("weak-strong", "weak-only", "strong-only", "none"))
    p.add_argument("--head", default="reasoning", choices=("reasoning", "pooled"))
    p.add_argument("--context-mode", default="both",
                   choices=("three", "two", "both"))
    p.add_argument("--eval-permutation", default="average-all",
                   choices=("canonical", "average-all"))
    p.add_argument("--stop-at-accuracy", type=float, default=None,
                   help="stop once validation accuracy reaches this value")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cvrlab",
        description="odd-one-out panel generation, training, and evaluation")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a panel dataset")
    p.add_argument("--rules", required=True,
                   help="comma-separated rule names")
    p.add_argument("--n-train", type=int, default=2000,
                   help="training panels per rule")
    p.add_argument("--n-val", type=int, default=500)
    p.add_argument("--n-test", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--res", type=int, default=64)
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true",
                   help="overwrite a non-empty output directory")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="train a model on a generated dataset")
    p.add_argument("--data", required=True,
                   help="dataset directory holding train/ and val/")
    p.add_argument("--out", required=True)
    _add_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a trained run on a split")
    p.add_argument("--run", required=True, help="train output directory")
    p.add_argument("--data", required=True)
    p.add_argument("--split", default=None,
                   help="subdirectory of --data to use (e.g. test); "
                        "omit if --data is itself a split")
    p.add_argument("--out", default=None,
                   help="where to write metrics.json (default: the run directory)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="run one ablation grid")
    p.add_argument("--grid", required=True)
    p.add_argument("--data", required=True,
                   help="dataset directory holding train/, val/ and test/")
    p.add_argument("--out", required=True)
    p.add_argument("--seeds", default="0",
                   help="comma-separated seeds; one report row per cell per seed")
    _add_train_flags(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("gradcheck", help="finite-difference check of every op")
    p.add_argument("--dtype", default="float32", choices=("float32", "float64"))
    p.add_argument("--corrupt-op", default=None, help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_gradcheck)

    return parser


def run(argv: list | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args, ["cvrlab"] + argv)
    except UsageError as exc:
        _note(f"error: {exc}")
        return EXIT_USAGE
    except (DataError, CheckpointError, FileNotFoundError) as exc:
        _note(f"data error: {exc}")
        return EXIT_DATA
    except NumericsError as exc:
        _note(f"numerical failure: {exc}")
        return EXIT_NUMERIC
    except (ShapeError, ValueError) as exc:
        _note(f"error: {exc}")
        return EXIT_USAGE
