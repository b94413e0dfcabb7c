"""Experiment configuration: a strict, versioned JSON schema over typed sections.

Unknown keys are errors (misspelled ablation toggles must not silently fall
back to defaults), every field has an explicit default, and a resolved config
serializes to the exact dict that reparses to itself.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .model import GradReversalConfig
from .synth import DatasetSpec, DomainShift
from .train import StageConfig, TrainConfig

SCHEMA_VERSION = 1

LADDER_RUNGS = ("baseline", "augment", "top_k", "discriminator", "two_stage", "five_crop")


class ConfigError(ValueError):
    """Configuration parse/validation failure, with a field-path diagnostic."""


@dataclass
class ModelDims:
    hidden1: int = 256
    hidden2: int = 128
    feature_dim: int = 64
    disc_hidden: int = 64


@dataclass
class EvalOptions:
    threshold: float = 0.5
    use_five_crop: bool = True


@dataclass
class AblationOptions:
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2])
    ladder: list[str] = field(default_factory=lambda: list(LADDER_RUNGS))


@dataclass
class ExperimentConfig:
    run_id: str = "run"
    out_dir: str = "out"
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    model: ModelDims = field(default_factory=ModelDims)
    train: TrainConfig = field(default_factory=lambda: default_train_config())
    eval: EvalOptions = field(default_factory=EvalOptions)
    two_stage: bool = True
    ablation: AblationOptions = field(default_factory=AblationOptions)
    schema_version: int = SCHEMA_VERSION

    def validate(self) -> None:
        if self.schema_version != SCHEMA_VERSION:
            raise ConfigError(f"schema_version: expected {SCHEMA_VERSION}, got {self.schema_version}")
        if not self.run_id:
            raise ConfigError("run_id: must be non-empty")
        try:
            self.dataset.validate()
        except ValueError as exc:
            raise ConfigError(f"dataset: {exc}") from exc
        try:
            self.train.validate()
        except ValueError as exc:
            raise ConfigError(f"train: {exc}") from exc
        if not 0.0 <= self.eval.threshold:
            raise ConfigError("eval.threshold: must be >= 0")
        bad = [r for r in self.ablation.ladder if r not in LADDER_RUNGS]
        if bad:
            raise ConfigError(f"ablation.ladder: unknown rungs {bad}; valid rungs are {list(LADDER_RUNGS)}")
        if len(set(self.ablation.ladder)) != len(self.ablation.ladder):
            raise ConfigError("ablation.ladder: duplicate rungs")
        if not self.ablation.seeds:
            raise ConfigError("ablation.seeds: must be non-empty")


def default_stage1() -> StageConfig:
    """Desk-scale stage 1: adversarial alignment under an adaptive optimizer."""
    return StageConfig(
        steps=2000,
        lr_heads=7e-4,
        lr_backbone=3.5e-4,
        warmup_fraction=0.05,
        optimizer="adaptive",
        use_discriminator=True,
        w_ova=1.0,
        w_ent=0.3,
        w_dom=1.0,
        top_k=3,
    )


def default_stage2() -> StageConfig:
    """Desk-scale stage 2: discriminator removed, momentum SGD, heads-heavy rates."""
    return StageConfig(
        steps=600,
        lr_heads=1e-3,
        lr_backbone=4e-5,
        warmup_fraction=0.05,
        optimizer="momentum",
        use_discriminator=False,
        w_ova=1.0,
        w_ent=0.3,
        w_dom=1.0,
        top_k=3,
    )


def default_train_config() -> TrainConfig:
    return TrainConfig(stage1=default_stage1(), stage2=default_stage2(), invert_wt=True)


def full_scale_train_config() -> TrainConfig:
    """The documented full-scale preset: 30k/8k steps, the published two-rate
    scheme (8.0e-6 / 4.0e-6, then 1.0e-3 / 8.0e-6), and 300 near negatives.

    Kept as a reference configuration; it assumes a large pretrained backbone
    and is not tuned for the synthetic desk benchmark.
    """
    stage1 = StageConfig(
        steps=30_000, lr_heads=8.0e-6, lr_backbone=4.0e-6,
        optimizer="adaptive", use_discriminator=True, top_k=300,
    )
    stage2 = StageConfig(
        steps=8_000, lr_heads=1.0e-3, lr_backbone=8.0e-6,
        optimizer="momentum", use_discriminator=False, top_k=300,
    )
    return TrainConfig(stage1=stage1, stage2=stage2, batch_size=64)


# ---------------------------------------------------------------------------
# Strict dict <-> dataclass conversion
# ---------------------------------------------------------------------------


def _check_keys(d: dict, allowed: set[str], path: str) -> None:
    if not isinstance(d, dict):
        raise ConfigError(f"{path}: expected an object")
    unknown = set(d) - allowed
    if unknown:
        raise ConfigError(f"{path}: unknown keys {sorted(unknown)}")


def _typed(d: dict, key: str, types, default, path: str):
    if key not in d:
        return default
    value = d[key]
    if types is float and isinstance(value, int) and not isinstance(value, bool):
        value = float(value)
    if types is int and isinstance(value, bool):
        raise ConfigError(f"{path}.{key}: expected int, got bool")
    if not isinstance(value, types):
        raise ConfigError(f"{path}.{key}: expected {getattr(types, '__name__', types)}, got {type(value).__name__}")
    return value


def _parse_shift(d: dict, path: str) -> DomainShift:
    base = DomainShift()
    _check_keys(d, {f for f in DomainShift.__dataclass_fields__}, path)
    return DomainShift(
        intensity_scale=_typed(d, "intensity_scale", float, base.intensity_scale, path),
        intensity_offset=_typed(d, "intensity_offset", float, base.intensity_offset, path),
        noise_sigma_source=_typed(d, "noise_sigma_source", float, base.noise_sigma_source, path),
        noise_sigma_target=_typed(d, "noise_sigma_target", float, base.noise_sigma_target, path),
        blob_translation=_typed(d, "blob_translation", int, base.blob_translation, path),
    )


def _parse_dataset(d: dict, path: str) -> DatasetSpec:
    base = DatasetSpec()
    _check_keys(d, {f for f in DatasetSpec.__dataclass_fields__}, path)
    return DatasetSpec(
        total_classes=_typed(d, "total_classes", int, base.total_classes, path),
        shared_classes=_typed(d, "shared_classes", int, base.shared_classes, path),
        source_private=_typed(d, "source_private", int, base.source_private, path),
        target_private=_typed(d, "target_private", int, base.target_private, path),
        image_side=_typed(d, "image_side", int, base.image_side, path),
        crop_side=_typed(d, "crop_side", int, base.crop_side, path),
        samples_per_class_source=_typed(d, "samples_per_class_source", int, base.samples_per_class_source, path),
        samples_per_class_target=_typed(d, "samples_per_class_target", int, base.samples_per_class_target, path),
        shift=_parse_shift(d.get("shift", {}), f"{path}.shift"),
        seed=_typed(d, "seed", int, base.seed, path),
    )


def _parse_model(d: dict, path: str) -> ModelDims:
    base = ModelDims()
    _check_keys(d, {f for f in ModelDims.__dataclass_fields__}, path)
    return ModelDims(
        hidden1=_typed(d, "hidden1", int, base.hidden1, path),
        hidden2=_typed(d, "hidden2", int, base.hidden2, path),
        feature_dim=_typed(d, "feature_dim", int, base.feature_dim, path),
        disc_hidden=_typed(d, "disc_hidden", int, base.disc_hidden, path),
    )


_STAGE_KEYS = {
    "steps", "lr_heads", "lr_backbone", "warmup_fraction", "optimizer",
    "use_discriminator", "w_ova", "w_ent", "w_dom", "top_k",
}


def _parse_stage(d: dict, base: StageConfig, path: str) -> StageConfig:
    _check_keys(d, _STAGE_KEYS, path)
    return StageConfig(
        steps=_typed(d, "steps", int, base.steps, path),
        lr_heads=_typed(d, "lr_heads", float, base.lr_heads, path),
        lr_backbone=_typed(d, "lr_backbone", float, base.lr_backbone, path),
        warmup_fraction=_typed(d, "warmup_fraction", float, base.warmup_fraction, path),
        optimizer=_typed(d, "optimizer", str, base.optimizer, path),
        use_discriminator=_typed(d, "use_discriminator", bool, base.use_discriminator, path),
        w_ova=_typed(d, "w_ova", float, base.w_ova, path),
        w_ent=_typed(d, "w_ent", float, base.w_ent, path),
        w_dom=_typed(d, "w_dom", float, base.w_dom, path),
        top_k=_typed(d, "top_k", int, base.top_k, path),
    )


_TRAIN_KEYS = {
    "stage1", "stage2", "batch_size", "grl_lambda", "seed", "eval_every",
    "augment", "clip_norm", "invert_wt",
}


def _parse_train(d: dict, path: str) -> TrainConfig:
    _check_keys(d, _TRAIN_KEYS, path)
    base = default_train_config()
    clip = d.get("clip_norm", base.clip_norm)
    if clip is not None:
        clip = _typed(d, "clip_norm", float, base.clip_norm, path)
    return TrainConfig(
        stage1=_parse_stage(d.get("stage1", {}), default_stage1(), f"{path}.stage1"),
        stage2=_parse_stage(d.get("stage2", {}), default_stage2(), f"{path}.stage2"),
        batch_size=_typed(d, "batch_size", int, base.batch_size, path),
        grl=GradReversalConfig(lam=_typed(d, "grl_lambda", float, base.grl.lam, path)),
        seed=_typed(d, "seed", int, base.seed, path),
        eval_every=_typed(d, "eval_every", int, base.eval_every, path),
        augment=_typed(d, "augment", bool, base.augment, path),
        clip_norm=clip,
        invert_wt=_typed(d, "invert_wt", bool, base.invert_wt, path),
    )


def _parse_eval(d: dict, path: str) -> EvalOptions:
    base = EvalOptions()
    _check_keys(d, {f for f in EvalOptions.__dataclass_fields__}, path)
    return EvalOptions(
        threshold=_typed(d, "threshold", float, base.threshold, path),
        use_five_crop=_typed(d, "use_five_crop", bool, base.use_five_crop, path),
    )


def _parse_ablation(d: dict, path: str) -> AblationOptions:
    base = AblationOptions()
    _check_keys(d, {f for f in AblationOptions.__dataclass_fields__}, path)
    seeds = _typed(d, "seeds", list, base.seeds, path)
    ladder = _typed(d, "ladder", list, base.ladder, path)
    if not all(isinstance(s, int) and not isinstance(s, bool) for s in seeds):
        raise ConfigError(f"{path}.seeds: expected a list of ints")
    if not all(isinstance(r, str) for r in ladder):
        raise ConfigError(f"{path}.ladder: expected a list of strings")
    return AblationOptions(seeds=list(seeds), ladder=list(ladder))


_TOP_KEYS = {
    "schema_version", "run_id", "out_dir", "dataset", "model", "train",
    "eval", "two_stage", "ablation",
}


def config_from_dict(d: dict) -> ExperimentConfig:
    _check_keys(d, _TOP_KEYS, "config")
    cfg = ExperimentConfig(
        run_id=_typed(d, "run_id", str, "run", "config"),
        out_dir=_typed(d, "out_dir", str, "out", "config"),
        dataset=_parse_dataset(d.get("dataset", {}), "config.dataset"),
        model=_parse_model(d.get("model", {}), "config.model"),
        train=_parse_train(d.get("train", {}), "config.train"),
        eval=_parse_eval(d.get("eval", {}), "config.eval"),
        two_stage=_typed(d, "two_stage", bool, True, "config"),
        ablation=_parse_ablation(d.get("ablation", {}), "config.ablation"),
        schema_version=_typed(d, "schema_version", int, SCHEMA_VERSION, "config"),
    )
    cfg.validate()
    return cfg


def config_to_dict(cfg: ExperimentConfig) -> dict:
    return {
        "schema_version": cfg.schema_version,
        "run_id": cfg.run_id,
        "out_dir": cfg.out_dir,
        "dataset": {
            "total_classes": cfg.dataset.total_classes,
            "shared_classes": cfg.dataset.shared_classes,
            "source_private": cfg.dataset.source_private,
            "target_private": cfg.dataset.target_private,
            "image_side": cfg.dataset.image_side,
            "crop_side": cfg.dataset.crop_side,
            "samples_per_class_source": cfg.dataset.samples_per_class_source,
            "samples_per_class_target": cfg.dataset.samples_per_class_target,
            "shift": {
                "intensity_scale": cfg.dataset.shift.intensity_scale,
                "intensity_offset": cfg.dataset.shift.intensity_offset,
                "noise_sigma_source": cfg.dataset.shift.noise_sigma_source,
                "noise_sigma_target": cfg.dataset.shift.noise_sigma_target,
                "blob_translation": cfg.dataset.shift.blob_translation,
            },
            "seed": cfg.dataset.seed,
        },
        "model": {
            "hidden1": cfg.model.hidden1,
            "hidden2": cfg.model.hidden2,
            "feature_dim": cfg.model.feature_dim,
            "disc_hidden": cfg.model.disc_hidden,
        },
        "train": {
            "stage1": _stage_to_dict(cfg.train.stage1),
            "stage2": _stage_to_dict(cfg.train.stage2),
            "batch_size": cfg.train.batch_size,
            "grl_lambda": cfg.train.grl.lam,
            "seed": cfg.train.seed,
            "eval_every": cfg.train.eval_every,
            "augment": cfg.train.augment,
            "clip_norm": cfg.train.clip_norm,
            "invert_wt": cfg.train.invert_wt,
        },
        "eval": {
            "threshold": cfg.eval.threshold,
            "use_five_crop": cfg.eval.use_five_crop,
        },
        "two_stage": cfg.two_stage,
        "ablation": {
            "seeds": list(cfg.ablation.seeds),
            "ladder": list(cfg.ablation.ladder),
        },
    }


def _stage_to_dict(stage: StageConfig) -> dict:
    return {
        "steps": stage.steps,
        "lr_heads": stage.lr_heads,
        "lr_backbone": stage.lr_backbone,
        "warmup_fraction": stage.warmup_fraction,
        "optimizer": stage.optimizer,
        "use_discriminator": stage.use_discriminator,
        "w_ova": stage.w_ova,
        "w_ent": stage.w_ent,
        "w_dom": stage.w_dom,
        "top_k": stage.top_k,
    }


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    return config_from_dict(raw)


def save_config(cfg: ExperimentConfig, path: str | Path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(config_to_dict(cfg), indent=2, sort_keys=True))
    return path
