"""Command-line entry points: gen-data, train, source-only, eval, ablate."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .config import ConfigError, ExperimentConfig, load_config
from .experiments import (
    generate_and_save_dataset,
    run_ablation,
    run_dir_for,
    run_experiment,
    run_source_only,
    single_thread_limits,
    with_seed,
    _write_eval_artifacts,
)
from .model import load_checkpoint
from .synth import generate_dataset
from .train import TrainingDivergedError


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", required=True, help="path to a JSON experiment config")
    parser.add_argument("--seed", type=int, default=None,
                        help="override both the dataset and training seeds")
    parser.add_argument("--out", default=None, help="override the config's output directory")
    parser.add_argument("--single-thread", action="store_true",
                        help="pin linear algebra to one thread for bit-exact output")


def _resolve(args) -> ExperimentConfig:
    config = load_config(args.config)
    if args.out is not None:
        from dataclasses import replace

        config = replace(config, out_dir=args.out)
    if args.seed is not None:
        config = with_seed(config, args.seed)
    return config


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="unidalab",
        description="Universal domain adaptation lab on a synthetic domain-shift benchmark",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate and export the synthetic dataset")
    _add_common(p)

    p = sub.add_parser("train", help="run the full two-stage adaptation experiment")
    _add_common(p)

    p = sub.add_parser("source-only", help="train and evaluate the source-only reference")
    _add_common(p)
    p.add_argument("--adapted-metrics", default=None,
                   help="metrics.json of an adapted run; adds the adapted row to comparison.csv")

    p = sub.add_parser("eval", help="evaluate a checkpoint on the config's test split")
    _add_common(p)
    p.add_argument("--checkpoint", required=True, help="checkpoint directory to evaluate")

    p = sub.add_parser("ablate", help="run the cumulative ablation ladder")
    _add_common(p)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = _resolve(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1

    try:
        if args.command == "gen-data":
            path = generate_and_save_dataset(config)
            print(f"dataset written to {path}")
        elif args.command == "train":
            run_dir = run_experiment(config, single_thread=args.single_thread)
            print(f"run artifacts in {run_dir}")
        elif args.command == "source-only":
            report = run_source_only(
                config,
                adapted_metrics=args.adapted_metrics,
                single_thread=args.single_thread,
            )
            print(f"source-only: acc={report.acc:.2f} auroc={report.auroc:.4f}")
            print(f"run artifacts in {run_dir_for(config)}")
        elif args.command == "eval":
            params, _ = load_checkpoint(args.checkpoint)
            run_dir = run_dir_for(config) / "eval"
            run_dir.mkdir(parents=True, exist_ok=True)
            with single_thread_limits(args.single_thread):
                _, _, target_test = generate_dataset(config.dataset)
                report = _write_eval_artifacts(run_dir, params, target_test, config)
            print(f"eval: acc={report.acc:.2f} auroc={report.auroc:.4f} -> {run_dir}")
        elif args.command == "ablate":
            out = run_ablation(config, single_thread=args.single_thread)
            print(f"ablation table in {out / 'ablation.csv'}")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except FileExistsError as exc:
        print(f"refusing to overwrite: {exc}", file=sys.stderr)
        return 1
    except TrainingDivergedError as exc:
        print(f"training diverged: {exc} (partial logs retained)", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
