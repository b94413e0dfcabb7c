"""Two-stage optimization: per-step loss composition with gradient reversal,
per-group learning rates, warmup + cosine schedule, and the stage runner.

Stage 1 trains everything (including the adversarial discriminator) with a
decoupled-weight-decay adaptive optimizer; stage 2 drops the discriminator
from the optimized set and switches to momentum SGD.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .losses import LossBreakdown, domain_adversarial_loss
from .model import (
    GradReversalConfig,
    ModelConfig,
    ModelParams,
    accumulate,
    closed_backward,
    closed_logits,
    discriminator_backward,
    discriminator_forward,
    extractor_backward,
    extractor_forward,
    init_params,
    open_backward,
    open_pair_logits,
    pair_known_prob,
    param_group,
    sigmoid,
    softplus,
)
from .synth import Batch, LabeledImage, make_batch, _sample_source_crops

OPTIMIZER_KINDS = ("adaptive", "momentum")


class TrainingDivergedError(RuntimeError):
    """Raised when a loss, gradient, or parameter goes non-finite."""


@dataclass
class StageConfig:
    steps: int
    lr_heads: float
    lr_backbone: float
    warmup_fraction: float = 0.05
    optimizer: str = "adaptive"
    use_discriminator: bool = False
    w_ova: float = 1.0
    w_ent: float = 0.1
    w_dom: float = 1.0
    top_k: int = 3

    def validate(self) -> None:
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.lr_heads <= 0 or self.lr_backbone <= 0:
            raise ValueError("learning rates must be > 0")
        if not 0.0 <= self.warmup_fraction < 1.0:
            raise ValueError("warmup_fraction must be in [0, 1)")
        if self.optimizer not in OPTIMIZER_KINDS:
            raise ValueError(f"optimizer must be one of {OPTIMIZER_KINDS}")
        if self.top_k < 1:
            raise ValueError("top_k must be >= 1")
        for name in ("w_ova", "w_ent", "w_dom"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")


@dataclass
class TrainConfig:
    stage1: StageConfig
    stage2: StageConfig
    batch_size: int = 64
    grl: GradReversalConfig = field(default_factory=GradReversalConfig)
    seed: int = 0
    eval_every: int = 500
    augment: bool = True
    clip_norm: float | None = 5.0
    invert_wt: bool = False

    def validate(self) -> None:
        self.stage1.validate()
        self.stage2.validate()
        if self.stage2.use_discriminator:
            raise ValueError("stage2.use_discriminator must be false: the discriminator is removed in stage 2")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.eval_every < 0:
            raise ValueError("eval_every must be >= 0")
        if self.clip_norm is not None and self.clip_norm <= 0:
            raise ValueError("clip_norm must be positive or null")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")
        self.grl.validate()


@dataclass
class TrainLogRow:
    step: int
    stage: int
    closed_ce: float
    ova: float
    entropy: float
    domain_adv: float
    total: float
    lr_heads: float
    lr_backbone: float


@dataclass
class TrainLog:
    rows: list[TrainLogRow] = field(default_factory=list)
    snapshots: list[tuple[int, object]] = field(default_factory=list)
    stage_bounds: list[tuple[int, int, int]] = field(default_factory=list)  # (stage, start, end)

    def to_csv(self, path: str | Path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                ["step", "stage", "closed_ce", "ova", "entropy", "domain_adv", "total", "lr_heads", "lr_backbone"]
            )
            for r in self.rows:
                writer.writerow(
                    [r.step, r.stage, repr(r.closed_ce), repr(r.ova), repr(r.entropy),
                     repr(r.domain_adv), repr(r.total), repr(r.lr_heads), repr(r.lr_backbone)]
                )
        return path


def lr_schedule(step: int, total_steps: int, base_lr: float, warmup_fraction: float) -> float:
    """Linear warmup to base_lr, then cosine decay to zero at total_steps."""
    if not 0 <= step < total_steps:
        raise ValueError(f"step {step} out of range [0, {total_steps})")
    warmup = int(np.ceil(warmup_fraction * total_steps))
    if step < warmup:
        return base_lr * step / warmup
    progress = (step - warmup) / (total_steps - warmup)
    return base_lr * 0.5 * (1.0 + float(np.cos(np.pi * progress)))


# ---------------------------------------------------------------------------
# Optimizers
# ---------------------------------------------------------------------------


class AdamW:
    """Per-parameter first/second moments with decoupled weight decay."""

    def __init__(self, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8,
                 weight_decay: float = 0.01):
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0

    def step(self, values: dict[str, np.ndarray], grads: dict[str, np.ndarray],
             lr_of: Callable[[str], float]) -> dict[str, np.ndarray]:
        """Update only the parameters that have gradients; others pass through."""
        self.t += 1
        out = dict(values)
        for name in sorted(grads):
            g = grads[name]
            m = self.m.get(name, np.zeros_like(g))
            v = self.v.get(name, np.zeros_like(g))
            m = self.beta1 * m + (1.0 - self.beta1) * g
            v = self.beta2 * v + (1.0 - self.beta2) * g * g
            self.m[name] = m
            self.v[name] = v
            m_hat = m / (1.0 - self.beta1**self.t)
            v_hat = v / (1.0 - self.beta2**self.t)
            lr = lr_of(name)
            theta = values[name]
            out[name] = theta - lr * (m_hat / (np.sqrt(v_hat) + self.eps)) - lr * self.weight_decay * theta
        return out


class MomentumSGD:
    def __init__(self, momentum: float = 0.9):
        self.momentum = momentum
        self.buf: dict[str, np.ndarray] = {}

    def step(self, values: dict[str, np.ndarray], grads: dict[str, np.ndarray],
             lr_of: Callable[[str], float]) -> dict[str, np.ndarray]:
        out = dict(values)
        for name in sorted(grads):
            u = self.buf.get(name, np.zeros_like(grads[name]))
            u = self.momentum * u + grads[name]
            self.buf[name] = u
            out[name] = values[name] - lr_of(name) * u
        return out


def make_optimizer(kind: str):
    if kind == "adaptive":
        return AdamW()
    if kind == "momentum":
        return MomentumSGD()
    raise ValueError(f"unknown optimizer kind {kind!r}")


def clip_global_norm(grads: dict[str, np.ndarray], max_norm: float | None) -> dict[str, np.ndarray]:
    if max_norm is None:
        return grads
    total = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if total <= max_norm or total == 0.0:
        return grads
    scale = max_norm / total
    return {k: g * scale for k, g in grads.items()}


# ---------------------------------------------------------------------------
# Batched loss values and gradients (vectorized forms of the losses module;
# tested for equality against the per-sample definitions)
# ---------------------------------------------------------------------------


def _closed_ce_batch(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    n = logits.shape[0]
    rows = np.arange(n)
    m = logits.max(axis=1, keepdims=True)
    e = np.exp(logits - m)
    z = e.sum(axis=1, keepdims=True)
    log_p = (logits - m) - np.log(z)
    value = float(-log_p[rows, labels].mean())
    d = e / z
    d[rows, labels] -= 1.0
    return value, d / n


def _ova_topk_batch(pairs: np.ndarray, labels: np.ndarray, k: int) -> tuple[float, np.ndarray]:
    n, kk, _ = pairs.shape
    rows = np.arange(n)
    s = pairs[:, :, 0] - pairs[:, :, 1]
    p = sigmoid(s)
    pos_term = softplus(-s[rows, labels])
    ds = np.zeros_like(s)
    ds[rows, labels] = -(1.0 - p[rows, labels])
    m = min(k, kk - 1)
    if m > 0:
        masked = p.copy()
        masked[rows, labels] = -np.inf
        sel = np.argsort(-masked, axis=1, kind="stable")[:, :m]
        pos_term = pos_term + softplus(np.take_along_axis(s, sel, axis=1)).mean(axis=1)
        np.add.at(ds, (rows[:, None], sel), np.take_along_axis(p, sel, axis=1) / m)
    value = float(pos_term.mean())
    d_pairs = np.stack([ds, -ds], axis=2) / n
    return value, d_pairs


def _entropy_batch(pairs: np.ndarray) -> tuple[float, np.ndarray]:
    n, kk, _ = pairs.shape
    s = pairs[:, :, 0] - pairs[:, :, 1]
    p = sigmoid(s)
    h = p * softplus(-s) + (1.0 - p) * softplus(s)
    value = float(h.mean(axis=1).mean())
    ds = -s * p * sigmoid(-s) / (kk * n)
    return value, np.stack([ds, -ds], axis=2)


def batch_arrays(batch: Batch) -> tuple[np.ndarray, np.ndarray, np.ndarray | None]:
    """Flatten a Batch into (source pixels, source labels, target pixels)."""
    x_src = np.stack([img.pixels.reshape(-1) for img in batch.source_images])
    labels = np.array([img.label for img in batch.source_images], dtype=np.int64)
    if np.any(labels < 0):
        raise ValueError("source batch contains hidden labels")
    x_tgt = None
    if batch.target_images:
        x_tgt = np.stack([img.pixels.reshape(-1) for img in batch.target_images])
    return x_src, labels, x_tgt


def compute_losses_and_grads(
    params: ModelParams,
    x_src: np.ndarray,
    labels_src: np.ndarray,
    x_tgt: np.ndarray | None,
    stage: StageConfig,
    grl: GradReversalConfig,
    invert_wt: bool = False,
) -> tuple[LossBreakdown, dict[str, np.ndarray]]:
    """All four losses plus analytic gradients of the weighted total.

    Source items contribute the closed-set cross-entropy and the top-k
    one-vs-all loss; target items contribute the open-set entropy and, when
    the discriminator is active, the adversarial loss with the per-target
    unknown weight held constant. Gradients of the domain loss into features
    are scaled by -lam (reversal); gradients into the discriminator are not.
    Only parameters that receive gradients appear in the returned dict, so
    inactive sub-networks stay untouched by the optimizer.
    """
    n_s = x_src.shape[0]
    feats_src, cache_src = extractor_forward(params, x_src)
    logits_src = closed_logits(params, feats_src)
    pairs_src = open_pair_logits(params, feats_src)

    ce_val, d_logits = _closed_ce_batch(logits_src, labels_src)
    ova_val, d_pairs_src = _ova_topk_batch(pairs_src, labels_src, stage.top_k)

    d_feats_src, cls_grads = closed_backward(params, feats_src, d_logits)
    d_open_src, open_grads = open_backward(params, feats_src, stage.w_ova * d_pairs_src)
    d_feats_src = d_feats_src + d_open_src

    grads: dict[str, np.ndarray] = {}
    accumulate(grads, cls_grads)
    accumulate(grads, open_grads)

    ent_val = 0.0
    dom_val = 0.0
    if x_tgt is not None:
        n_t = x_tgt.shape[0]
        feats_tgt, cache_tgt = extractor_forward(params, x_tgt)
        pairs_tgt = open_pair_logits(params, feats_tgt)
        ent_val, d_pairs_tgt = _entropy_batch(pairs_tgt)
        d_feats_tgt, open_grads_tgt = open_backward(params, feats_tgt, stage.w_ent * d_pairs_tgt)
        accumulate(grads, open_grads_tgt)

        if stage.use_discriminator:
            # w_t is a constant during differentiation: computed once from the
            # current open-set and closed-set outputs, no gradient through it.
            known_tgt = pair_known_prob(pairs_tgt)
            y_hat = np.argmax(closed_logits(params, feats_tgt), axis=1)
            w_t = 1.0 - known_tgt[np.arange(n_t), y_hat]
            if invert_wt:
                w_t = 1.0 - w_t
            p_src, disc_cache_src = discriminator_forward(params, feats_src)
            p_tgt, disc_cache_tgt = discriminator_forward(params, feats_tgt)
            dom_val = domain_adversarial_loss(p_src, p_tgt, w_t)
            da_src = stage.w_dom * (p_src - 1.0) / n_s
            da_tgt = stage.w_dom * w_t * p_tgt / n_t
            d_feats_src_dom, disc_grads_src = discriminator_backward(params, disc_cache_src, da_src)
            d_feats_tgt_dom, disc_grads_tgt = discriminator_backward(params, disc_cache_tgt, da_tgt)
            accumulate(grads, disc_grads_src)
            accumulate(grads, disc_grads_tgt)
            d_feats_src = d_feats_src + (-grl.lam) * d_feats_src_dom
            d_feats_tgt = d_feats_tgt + (-grl.lam) * d_feats_tgt_dom

        accumulate(grads, extractor_backward(params, cache_tgt, d_feats_tgt))

    accumulate(grads, extractor_backward(params, cache_src, d_feats_src))
    breakdown = LossBreakdown.build(
        ce_val, ova_val, ent_val, dom_val, stage.w_ova, stage.w_ent, stage.w_dom
    )
    return breakdown, grads


def train_step(
    params: ModelParams,
    batch: Batch,
    stage: StageConfig,
    grl: GradReversalConfig,
    optimizer,
    lr_heads: float,
    lr_backbone: float,
    clip_norm: float | None = 5.0,
    invert_wt: bool = False,
) -> tuple[ModelParams, LossBreakdown]:
    """One optimization step; returns updated parameters and the loss breakdown."""
    x_src, labels_src, x_tgt = batch_arrays(batch)
    try:
        breakdown, grads = compute_losses_and_grads(
            params, x_src, labels_src, x_tgt, stage, grl, invert_wt
        )
    except FloatingPointError as exc:
        raise TrainingDivergedError(str(exc)) from exc
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise TrainingDivergedError(f"non-finite gradient in {name}")
    grads = clip_global_norm(grads, clip_norm)

    def lr_of(name: str) -> float:
        return lr_backbone if param_group(name) == "backbone" else lr_heads

    new_values = optimizer.step(params.values, grads, lr_of)
    new_params = ModelParams(params.config, new_values)
    try:
        new_params.assert_finite()
    except FloatingPointError as exc:
        raise TrainingDivergedError(str(exc)) from exc
    return new_params, breakdown


def run_stage(
    params: ModelParams,
    source_set: list[LabeledImage],
    target_train: list[LabeledImage] | None,
    stage: StageConfig,
    *,
    stage_index: int,
    batch_size: int,
    crop_side: int,
    grl: GradReversalConfig,
    rng: np.random.Generator,
    log: TrainLog | None = None,
    start_step: int = 0,
    augment: bool = True,
    clip_norm: float | None = 5.0,
    invert_wt: bool = False,
    eval_every: int = 0,
    eval_fn: Callable[[ModelParams], object] | None = None,
    checkpoint_fn: Callable[[str, int, int, ModelParams], None] | None = None,
) -> tuple[ModelParams, TrainLog]:
    """Run exactly stage.steps optimization steps with a fresh optimizer.

    target_train=None trains on source batches only (the source-only
    reference); the entropy and domain terms are then identically zero.
    """
    stage.validate()
    log = log if log is not None else TrainLog()
    optimizer = make_optimizer(stage.optimizer)
    for t in range(stage.steps):
        lr_h = lr_schedule(t, stage.steps, stage.lr_heads, stage.warmup_fraction)
        lr_b = lr_schedule(t, stage.steps, stage.lr_backbone, stage.warmup_fraction)
        if target_train is None:
            batch = Batch(_sample_source_crops(source_set, batch_size, rng, crop_side, augment), [])
        else:
            batch = make_batch(source_set, target_train, batch_size, rng, crop_side, augment)
        global_step = start_step + t
        try:
            params, breakdown = train_step(
                params, batch, stage, grl, optimizer, lr_h, lr_b, clip_norm, invert_wt
            )
        except TrainingDivergedError as exc:
            raise TrainingDivergedError(
                f"stage {stage_index} step {global_step}: {exc}"
            ) from exc
        log.rows.append(
            TrainLogRow(global_step, stage_index, breakdown.closed_ce, breakdown.ova,
                        breakdown.entropy, breakdown.domain_adv, breakdown.total, lr_h, lr_b)
        )
        done = global_step + 1
        if eval_every and done % eval_every == 0 and t + 1 < stage.steps:
            if eval_fn is not None:
                log.snapshots.append((done, eval_fn(params)))
            if checkpoint_fn is not None:
                checkpoint_fn(f"step_{done:07d}", done, stage_index, params)
    end_step = start_step + stage.steps
    if eval_fn is not None:
        log.snapshots.append((end_step, eval_fn(params)))
    if checkpoint_fn is not None:
        checkpoint_fn(f"stage{stage_index}_final", end_step, stage_index, params)
    log.stage_bounds.append((stage_index, start_step, end_step))
    return params, log


def train_full(
    config: TrainConfig,
    model_cfg: ModelConfig,
    source_set: list[LabeledImage],
    target_train: list[LabeledImage] | None,
    *,
    crop_side: int,
    two_stage: bool = True,
    eval_fn: Callable[[ModelParams], object] | None = None,
    checkpoint_fn: Callable[[str, int, int, ModelParams], None] | None = None,
    log: TrainLog | None = None,
) -> tuple[ModelParams, TrainLog]:
    """Full training: stage 1, then stage 2 with the discriminator removed.

    Returns the stage-2 model (or the stage-1 model when two_stage is false).
    Deterministic for a fixed config seed. A caller-supplied log keeps partial
    rows when a stage aborts.
    """
    config.validate()
    init_ss, s1_ss, s2_ss = np.random.SeedSequence(config.seed).spawn(3)
    params = init_params(model_cfg, init_ss)
    log = log if log is not None else TrainLog()
    common = dict(
        batch_size=config.batch_size,
        crop_side=crop_side,
        grl=config.grl,
        log=log,
        augment=config.augment,
        clip_norm=config.clip_norm,
        invert_wt=config.invert_wt,
        eval_every=config.eval_every,
        eval_fn=eval_fn,
        checkpoint_fn=checkpoint_fn,
    )
    params, log = run_stage(
        params, source_set, target_train, config.stage1,
        stage_index=1, rng=np.random.default_rng(s1_ss), start_step=0, **common
    )
    if two_stage:
        params, log = run_stage(
            params, source_set, target_train, config.stage2,
            stage_index=2, rng=np.random.default_rng(s2_ss),
            start_step=config.stage1.steps, **common
        )
    return params, log
