"""Reproducible experiment runs: artifact directories, the source-only
reference, and the cumulative ablation ladder.

A run directory is append-only: re-running into a directory that already holds
a metrics.json is an error, so completed artifacts are never overwritten.
"""

from __future__ import annotations

import csv
import json
import shutil
import warnings
from contextlib import nullcontext
from dataclasses import replace
from pathlib import Path

import numpy as np

from .config import ExperimentConfig, LADDER_RUNGS, save_config
from .metrics import MetricsReport, dump_scores, evaluate, predict
from .model import ModelConfig, ModelParams, load_checkpoint, save_checkpoint
from .synth import generate_dataset, save_dataset
from .train import TrainLog, TrainingDivergedError, train_full

METRICS_NAME = "metrics.json"
METRICS_STAGE1_NAME = "metrics_stage1.json"
TRAIN_LOG_NAME = "train_log.csv"
RESOLVED_CONFIG_NAME = "config.resolved.json"
SCORES_NAME = "scores.csv"
CHECKPOINTS_DIR = "checkpoints"
COMPARISON_NAME = "comparison.csv"


def single_thread_limits(enabled: bool = True):
    """Context manager pinning BLAS pools to one thread for bit-exact runs."""
    if not enabled:
        return nullcontext()
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=1)


def run_dir_for(config: ExperimentConfig) -> Path:
    return Path(config.out_dir) / config.run_id


def build_model_config(config: ExperimentConfig) -> ModelConfig:
    return ModelConfig(
        input_dim=config.dataset.crop_side**2,
        num_classes=config.dataset.num_source_classes,
        hidden1=config.model.hidden1,
        hidden2=config.model.hidden2,
        feature_dim=config.model.feature_dim,
        disc_hidden=config.model.disc_hidden,
    )


def with_seed(config: ExperimentConfig, seed: int) -> ExperimentConfig:
    """Reseed a config: both the dataset draw and the training run."""
    return replace(
        config,
        dataset=replace(config.dataset, seed=seed),
        train=replace(config.train, seed=seed),
    )


def generate_and_save_dataset(config: ExperimentConfig, run_dir: str | Path | None = None) -> Path:
    config.validate()
    run_dir = Path(run_dir) if run_dir is not None else run_dir_for(config)
    source_set, target_train, target_test = generate_dataset(config.dataset)
    return save_dataset(run_dir / "dataset", config.dataset, source_set, target_train, target_test)


def _write_eval_artifacts(
    run_dir: Path,
    params: ModelParams,
    target_test,
    config: ExperimentConfig,
) -> MetricsReport:
    report = evaluate(
        params, target_test,
        use_five_crop=config.eval.use_five_crop,
        threshold=config.eval.threshold,
        crop_side=config.dataset.crop_side,
    )
    report.to_json(run_dir / METRICS_NAME)
    preds = [
        predict(params, img, config.eval.use_five_crop, config.eval.threshold, config.dataset.crop_side)
        for img in target_test
    ]
    dump_scores(run_dir / SCORES_NAME, preds, target_test)
    return report


def _train_into(
    run_dir: Path,
    config: ExperimentConfig,
    source_set,
    target_train,
    target_test,
) -> tuple[ModelParams, TrainLog]:
    """Train with checkpoint/eval wiring; on divergence, keep partial logs."""
    ckpt_root = run_dir / CHECKPOINTS_DIR

    def checkpoint_fn(tag: str, step: int, stage: int, params: ModelParams) -> None:
        save_checkpoint(ckpt_root / tag, params, seed=config.train.seed, stage=stage, step=step)

    def eval_fn(params: ModelParams) -> MetricsReport:
        return evaluate(
            params, target_test,
            use_five_crop=config.eval.use_five_crop,
            threshold=config.eval.threshold,
            crop_side=config.dataset.crop_side,
        )

    if not config.two_stage:
        warnings.warn("two_stage=false: stage2 settings are ignored for this run")
    log = TrainLog()
    try:
        params, log = train_full(
            config.train,
            build_model_config(config),
            source_set,
            target_train,
            crop_side=config.dataset.crop_side,
            two_stage=config.two_stage,
            eval_fn=eval_fn,
            checkpoint_fn=checkpoint_fn,
            log=log,
        )
    except TrainingDivergedError:
        log.to_csv(run_dir / TRAIN_LOG_NAME)
        raise
    last_stage = 2 if config.two_stage else 1
    total_steps = config.train.stage1.steps + (config.train.stage2.steps if config.two_stage else 0)
    checkpoint_fn("final", total_steps, last_stage, params)
    log.to_csv(run_dir / TRAIN_LOG_NAME)

    stage1_params, _ = load_checkpoint(ckpt_root / "stage1_final")
    stage1_report = evaluate(
        stage1_params, target_test,
        use_five_crop=config.eval.use_five_crop,
        threshold=config.eval.threshold,
        crop_side=config.dataset.crop_side,
    )
    stage1_report.to_json(run_dir / METRICS_STAGE1_NAME)
    return params, log


def _prepare_run_dir(config: ExperimentConfig, run_dir: str | Path | None) -> Path:
    config.validate()
    run_dir = Path(run_dir) if run_dir is not None else run_dir_for(config)
    if (run_dir / METRICS_NAME).exists():
        raise FileExistsError(
            f"{run_dir} already holds a completed run; outputs are append-only"
        )
    run_dir.mkdir(parents=True, exist_ok=True)
    save_config(config, run_dir / RESOLVED_CONFIG_NAME)
    return run_dir


def run_experiment(
    config: ExperimentConfig,
    run_dir: str | Path | None = None,
    single_thread: bool = False,
) -> Path:
    """Full adaptation run: seeds, data, two-stage training, and all artifacts.

    Produces config.resolved.json, train_log.csv, metrics.json (plus the
    stage-1 report), scores.csv, and checkpoints/ under the run directory.
    """
    run_dir = _prepare_run_dir(config, run_dir)
    with single_thread_limits(single_thread):
        source_set, target_train, target_test = generate_dataset(config.dataset)
        params, _ = _train_into(run_dir, config, source_set, target_train, target_test)
        _write_eval_artifacts(run_dir, params, target_test, config)
    return run_dir


def source_only_config(config: ExperimentConfig) -> ExperimentConfig:
    """Strip every target-dependent term: no entropy, no discriminator."""
    s1 = replace(config.train.stage1, use_discriminator=False, w_ent=0.0, w_dom=0.0)
    s2 = replace(config.train.stage2, use_discriminator=False, w_ent=0.0, w_dom=0.0)
    return replace(config, train=replace(config.train, stage1=s1, stage2=s2))


def write_comparison(path: Path, source_report: MetricsReport,
                     adapted_report: MetricsReport | None) -> Path:
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["model", "acc", "auroc"])
        if adapted_report is not None:
            writer.writerow(["adapted", repr(adapted_report.acc), repr(adapted_report.auroc)])
        writer.writerow(["source_only", repr(source_report.acc), repr(source_report.auroc)])
    return path


def run_source_only(
    config: ExperimentConfig,
    run_dir: str | Path | None = None,
    adapted_metrics: str | Path | None = None,
    single_thread: bool = False,
) -> MetricsReport:
    """Train and evaluate the source-only reference model.

    The target training split is never handed to the trainer. When an adapted
    run's metrics file is supplied, the adapted-vs-source comparison table is
    written with both rows.
    """
    config = source_only_config(config)
    run_dir = _prepare_run_dir(config, run_dir)
    with single_thread_limits(single_thread):
        source_set, _, target_test = generate_dataset(config.dataset)
        params, _ = _train_into(run_dir, config, source_set, None, target_test)
        report = _write_eval_artifacts(run_dir, params, target_test, config)
    adapted = MetricsReport.from_json(adapted_metrics) if adapted_metrics else None
    write_comparison(run_dir / COMPARISON_NAME, report, adapted)
    return report


# ---------------------------------------------------------------------------
# Ablation ladder
# ---------------------------------------------------------------------------


def rung_config(config: ExperimentConfig, enabled: set[str]) -> ExperimentConfig:
    """Apply a cumulative toggle set on top of the base config.

    The baseline has every switchable component off (no augmentation, k=1,
    no discriminator, single stage, single crop); each toggle restores its
    component to the base config's value.
    """
    train = config.train
    k = train.stage1.top_k if "top_k" in enabled else 1
    s1 = replace(train.stage1, top_k=k, use_discriminator="discriminator" in enabled)
    s2 = replace(train.stage2, top_k=k)
    return replace(
        config,
        train=replace(train, stage1=s1, stage2=s2, augment="augment" in enabled),
        two_stage="two_stage" in enabled,
        eval=replace(config.eval, use_five_crop="five_crop" in enabled),
    )


def _reuse_previous_training(prev_dir: Path, dst_dir: Path) -> None:
    """Share training artifacts with the predecessor rung (eval-only rung)."""
    shutil.copytree(prev_dir / CHECKPOINTS_DIR, dst_dir / CHECKPOINTS_DIR)
    for name in (TRAIN_LOG_NAME, METRICS_STAGE1_NAME):
        src = prev_dir / name
        if src.exists():
            shutil.copy(src, dst_dir / name)


def run_ablation(
    config: ExperimentConfig,
    out_root: str | Path | None = None,
    single_thread: bool = False,
) -> Path:
    """Run the cumulative ablation ladder, each rung over the same seed set.

    Emits ablation.csv and ablation.json with per-rung mean/std ACC and AUROC.
    An eval-only rung (five_crop) reuses its predecessor's checkpoints instead
    of retraining.
    """
    config.validate()
    out_root = Path(out_root) if out_root is not None else run_dir_for(config)
    out_root.mkdir(parents=True, exist_ok=True)
    save_config(config, out_root / RESOLVED_CONFIG_NAME)

    enabled: set[str] = set()
    rows: list[dict] = []
    prev_dirs: dict[int, Path] = {}
    with single_thread_limits(single_thread):
        for i, rung in enumerate(config.ablation.ladder):
            if rung != "baseline":
                enabled.add(rung)
            rcfg_base = rung_config(config, enabled)
            rung_dir = out_root / "ablation" / f"{i:02d}_{rung}"
            accs, aurocs = [], []
            cur_dirs: dict[int, Path] = {}
            for seed in config.ablation.seeds:
                rcfg = with_seed(rcfg_base, seed)
                seed_dir = rung_dir / f"seed{seed:03d}"
                if rung == "five_crop" and prev_dirs:
                    seed_dir = _prepare_run_dir(rcfg, seed_dir)
                    _reuse_previous_training(prev_dirs[seed], seed_dir)
                    params, _ = load_checkpoint(seed_dir / CHECKPOINTS_DIR / "final")
                    _, _, target_test = generate_dataset(rcfg.dataset)
                    report = _write_eval_artifacts(seed_dir, params, target_test, rcfg)
                else:
                    run_experiment(rcfg, run_dir=seed_dir)
                    report = MetricsReport.from_json(seed_dir / METRICS_NAME)
                cur_dirs[seed] = seed_dir
                accs.append(report.acc)
                aurocs.append(report.auroc)
            prev_dirs = cur_dirs
            rows.append(
                {
                    "config_name": rung,
                    "acc_mean": float(np.mean(accs)),
                    "acc_std": float(np.std(accs)),
                    "auroc_mean": float(np.mean(aurocs)),
                    "auroc_std": float(np.std(aurocs)),
                    "seeds": list(config.ablation.seeds),
                    "acc_per_seed": accs,
                    "auroc_per_seed": aurocs,
                }
            )

    with (out_root / "ablation.csv").open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["config_name", "acc_mean", "acc_std", "auroc_mean", "auroc_std", "seeds"])
        for row in rows:
            writer.writerow(
                [row["config_name"], repr(row["acc_mean"]), repr(row["acc_std"]),
                 repr(row["auroc_mean"]), repr(row["auroc_std"]),
                 ";".join(str(s) for s in row["seeds"])]
            )
    (out_root / "ablation.json").write_text(json.dumps(rows, indent=2, sort_keys=True))
    return out_root
