"""Command-line entry point.

Subcommands: train, evaluate, synthesize, theory-check, export-embeddings.
Exit codes: 0 success, 2 configuration/usage error, 3 runtime abort.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time

from . import data as dataio
from .config import ConfigError, TrainConfig, load_config
from .data import DataError, IdMaps, SyntheticSpec
from .evaluation import EXPORT_VIEWS, export_embeddings
from .theory import scaling_distribution_check, write_bands_csv, write_curves_csv

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="conformrec")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train a model on a TSV interaction log")
    p_train.add_argument("--config", help="key=value config file")
    p_train.add_argument("--data", required=True, help="TSV file: user\\titem\\ttimestamp")
    p_train.add_argument("--out-dir", default="run_out")
    p_train.add_argument("--seed", type=int)
    p_train.add_argument("--epochs", type=int, dest="max_epochs")
    p_train.add_argument("--batch-size", type=int, dest="batch_size")
    p_train.add_argument("--lr", type=float)
    p_train.add_argument("--ablate", choices=["t-cl", "c-cl", "cl", "adaptive-cl"])
    p_train.add_argument("--dump-conformity", action="store_true")
    p_train.add_argument("--quiet", action="store_true")

    p_eval = sub.add_parser("evaluate", help="score a checkpoint on a TSV interaction log")
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--data", required=True)
    p_eval.add_argument("--split", choices=["test", "valid"], default="test")

    p_syn = sub.add_parser("synthesize", help="generate a synthetic popularity-biased corpus")
    p_syn.add_argument("--users", type=int, required=True)
    p_syn.add_argument("--items", type=int, required=True)
    p_syn.add_argument("--mean-len", type=int, required=True)
    p_syn.add_argument("--conformity", type=float, required=True)
    p_syn.add_argument("--zipf", type=float, required=True)
    p_syn.add_argument("--seed", type=int, required=True)
    p_syn.add_argument("--out", required=True)

    p_theory = sub.add_parser("theory-check", help="emit contribution curves, bands and a pass/fail summary")
    p_theory.add_argument("--tau", type=float, default=0.4)
    p_theory.add_argument("--mu-c", type=float, default=0.5)
    p_theory.add_argument("--sigma", type=float, default=0.1)
    p_theory.add_argument("--samples", type=int, default=2000)
    p_theory.add_argument("--seed", type=int, default=0)
    p_theory.add_argument("--out-dir", default="theory_out")

    p_export = sub.add_parser("export-embeddings", help="dump one embedding view as TSV")
    p_export.add_argument("--checkpoint", required=True)
    p_export.add_argument("--view", required=True, choices=list(EXPORT_VIEWS))
    p_export.add_argument("--out", required=True)
    return parser


def _cmd_train(args) -> int:
    overrides = {
        "seed": args.seed,
        "max_epochs": args.max_epochs,
        "batch_size": args.batch_size,
        "lr": args.lr,
        "ablate": args.ablate,
    }
    if args.config:
        config = load_config(args.config, overrides)
    else:
        config = TrainConfig(**{k: v for k, v in overrides.items() if v is not None})
        config.validate()
    from .trainer import TrainingAborted, train  # deferred: torch import is heavy

    interactions, id_maps = dataio.ingest(args.data)
    split = dataio.prepare_dataset(interactions, config.t_max, config.min_seq_len)
    os.makedirs(args.out_dir, exist_ok=True)
    id_maps.save(os.path.join(args.out_dir, "idmap.json"))
    dataio.write_drop_report(split, os.path.join(args.out_dir, "drop_report.json"))
    started = time.time()
    try:
        checkpoint = train(
            config,
            split,
            out_dir=args.out_dir,
            index_to_item=id_maps.index_to_item,
            dump_conformity=args.dump_conformity,
            quiet=args.quiet,
        )
    except TrainingAborted as exc:
        print(f"training aborted: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    print(
        json.dumps(
            {
                "out_dir": args.out_dir,
                "best_epoch": checkpoint["epoch"],
                "best_valid_ndcg10": checkpoint["best_metric"],
                "wall_clock_sec": round(time.time() - started, 2),
            }
        )
    )
    return EXIT_OK


def _cmd_evaluate(args) -> int:
    from .trainer import evaluate_checkpoint, load_checkpoint

    checkpoint = load_checkpoint(args.checkpoint)
    config = TrainConfig(**checkpoint["config"])
    tokens = checkpoint.get("index_to_item")
    if tokens:
        # users may be new at evaluation time; items must match training
        rows = dataio.parse_tsv_rows(args.data)
        user_tokens = sorted({r[0] for r in rows}, key=dataio._token_sort_key)
        maps = IdMaps(
            user_to_index={tok: i for i, tok in enumerate(user_tokens)},
            item_to_index={tok: i for i, tok in enumerate(tokens)},
        )
        interactions, _ = dataio.ingest(args.data, id_maps=maps)
    else:
        interactions, _ = dataio.ingest(args.data)
    split = dataio.prepare_dataset(interactions, config.t_max, config.min_seq_len)
    report = evaluate_checkpoint(checkpoint, split, which=args.split)
    print(json.dumps(report.as_dict(), indent=2))
    return EXIT_OK


def _cmd_synthesize(args) -> int:
    spec = SyntheticSpec(
        user_count=args.users,
        item_count=args.items,
        mean_length=args.mean_len,
        conformity_fraction=args.conformity,
        popularity_exponent=args.zipf,
        seed=args.seed,
    )
    interactions, labels = dataio.synthesize(spec)
    dataio.write_tsv(interactions, args.out)
    dataio.write_labels(labels, args.out + ".labels")
    print(json.dumps({"interactions": len(interactions), "out": args.out}))
    return EXIT_OK


def _cmd_theory(args) -> int:
    os.makedirs(args.out_dir, exist_ok=True)
    curves_path = os.path.join(args.out_dir, "contribution_curves.csv")
    bands_path = os.path.join(args.out_dir, "scaling_bands.csv")
    write_curves_csv(curves_path, args.tau)
    summary = scaling_distribution_check(
        args.mu_c, args.sigma, args.tau, sample_count=args.samples, seed=args.seed
    )
    write_bands_csv(bands_path, summary)
    from .theory import f1, f2

    checks = {
        "f1_at_1_is_0": f1(1.0, args.tau) == 0.0,
        "f1_at_0_is_0": f1(0.0, args.tau) == 0.0,
        "f2_at_1_is_0": f2(1.0, args.tau) == 0.0,
        "f2_at_0_is_1": f2(0.0, args.tau) == 1.0,
        "bands_inside_curve": summary["bands_inside_curve"],
        "scaled_mean_matches_mu_c": summary["mean_within_tolerance"],
    }
    print(
        json.dumps(
            {
                "checks": checks,
                "all_passed": all(checks.values()),
                "curves_csv": curves_path,
                "bands_csv": bands_path,
            },
            indent=2,
        )
    )
    return EXIT_OK if all(checks.values()) else EXIT_RUNTIME


def _cmd_export(args) -> int:
    from .trainer import load_checkpoint

    checkpoint = load_checkpoint(args.checkpoint)
    export_embeddings(checkpoint, args.view, args.out)
    print(json.dumps({"view": args.view, "out": args.out}))
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code else EXIT_OK
    try:
        if args.command == "train":
            return _cmd_train(args)
        if args.command == "evaluate":
            return _cmd_evaluate(args)
        if args.command == "synthesize":
            return _cmd_synthesize(args)
        if args.command == "theory-check":
            return _cmd_theory(args)
        if args.command == "export-embeddings":
            return _cmd_export(args)
        parser.print_usage(sys.stderr)
        return EXIT_CONFIG
    except (ConfigError, DataError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # runtime failures map to the abort code
        print(f"runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
