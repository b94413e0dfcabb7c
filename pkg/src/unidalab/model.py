"""Differentiable model: MLP feature extractor, closed-set and one-vs-all heads,
and a domain discriminator, all with hand-written backward passes.

Parameters live in a flat name -> array dict so optimizers, clipping, and
checkpointing can treat them uniformly. Forward passes are pure; backward
functions take the forward cache and an upstream gradient and return gradient
dicts in the same naming scheme.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

MODEL_MANIFEST = "model.json"
PARAMS_BIN = "params.bin"

BACKBONE_PREFIX = "ext_"
DISC_PREFIX = "disc_"


@dataclass(frozen=True)
class ModelConfig:
    """Network dimensions. num_classes is K, the number of source classes."""

    input_dim: int
    num_classes: int
    hidden1: int = 256
    hidden2: int = 128
    feature_dim: int = 64
    disc_hidden: int = 64

    def validate(self) -> None:
        for name in ("input_dim", "num_classes", "hidden1", "hidden2", "feature_dim", "disc_hidden"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


@dataclass(frozen=True)
class GradReversalConfig:
    """Gradient reversal: identity forward, gradients into features scaled by -lam."""

    lam: float = 1.0

    def validate(self) -> None:
        if not np.isfinite(self.lam) or self.lam < 0:
            raise ValueError("lam must be finite and >= 0")


def _layer_specs(cfg: ModelConfig) -> list[tuple[str, str, int, int]]:
    """(weight name, bias name, fan_in, fan_out) in fixed checkpoint order."""
    return [
        ("ext_w1", "ext_b1", cfg.input_dim, cfg.hidden1),
        ("ext_w2", "ext_b2", cfg.hidden1, cfg.hidden2),
        ("ext_w3", "ext_b3", cfg.hidden2, cfg.feature_dim),
        ("cls_w", "cls_b", cfg.feature_dim, cfg.num_classes),
        ("open_w", "open_b", cfg.feature_dim, 2 * cfg.num_classes),
        ("disc_w1", "disc_b1", cfg.feature_dim, cfg.disc_hidden),
        ("disc_w2", "disc_b2", cfg.disc_hidden, 1),
    ]


def param_order(cfg: ModelConfig) -> list[str]:
    names = []
    for w, b, _, _ in _layer_specs(cfg):
        names.extend([w, b])
    return names


@dataclass
class ModelParams:
    config: ModelConfig
    values: dict[str, np.ndarray]

    def copy(self) -> "ModelParams":
        return ModelParams(self.config, {k: v.copy() for k, v in self.values.items()})

    def __getitem__(self, name: str) -> np.ndarray:
        return self.values[name]

    def names(self) -> list[str]:
        return param_order(self.config)

    def assert_finite(self) -> None:
        for name, arr in self.values.items():
            if not np.all(np.isfinite(arr)):
                raise FloatingPointError(f"non-finite values in parameter {name}")


def param_group(name: str) -> str:
    """Learning-rate group: the extractor is 'backbone', everything else 'heads'."""
    return "backbone" if name.startswith(BACKBONE_PREFIX) else "heads"


def init_params(cfg: ModelConfig, seed) -> ModelParams:
    """Seeded init: weights uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)], biases zero."""
    cfg.validate()
    rng = np.random.default_rng(seed)
    values: dict[str, np.ndarray] = {}
    for w_name, b_name, fan_in, fan_out in _layer_specs(cfg):
        bound = 1.0 / np.sqrt(fan_in)
        values[w_name] = rng.uniform(-bound, bound, (fan_in, fan_out))
        values[b_name] = np.zeros(fan_out)
    return ModelParams(cfg, values)


def zero_grads(params: ModelParams) -> dict[str, np.ndarray]:
    return {k: np.zeros_like(v) for k, v in params.values.items()}


def accumulate(into: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    for k, v in grads.items():
        into[k] = into[k] + v if k in into else v
    return into


# ---------------------------------------------------------------------------
# Stable elementwise pieces
# ---------------------------------------------------------------------------


def sigmoid(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def softplus(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def pair_known_prob(pairs: np.ndarray) -> np.ndarray:
    """Pairwise softmax over (pos, neg) logit pairs, max-subtracted for stability.

    Returns the known probability per class, nudged strictly inside (0, 1) so
    downstream complements stay positive even when the softmax saturates.
    """
    m = pairs.max(axis=-1, keepdims=True)
    e = np.exp(pairs - m)
    p = e[..., 0] / (e[..., 0] + e[..., 1])
    lo = np.nextafter(0.0, 1.0)
    hi = np.nextafter(1.0, 0.0)
    return np.clip(p, lo, hi)


@dataclass
class OpenSetScores:
    """Per-class known-vs-unknown scores from K logit pairs."""

    logit_pairs: np.ndarray  # (K, 2): [:, 0] = known logit, [:, 1] = unknown logit
    known_prob: np.ndarray  # (K,)

    @classmethod
    def from_pairs(cls, pairs: np.ndarray) -> "OpenSetScores":
        pairs = np.asarray(pairs, dtype=np.float64)
        return cls(pairs, pair_known_prob(pairs))


# ---------------------------------------------------------------------------
# Forward / backward passes
# ---------------------------------------------------------------------------


@dataclass
class ExtractorCache:
    x: np.ndarray
    a1: np.ndarray
    a2: np.ndarray


def extractor_forward(params: ModelParams, x: np.ndarray) -> tuple[np.ndarray, ExtractorCache]:
    """Batched feature extraction; x is (n, input_dim)."""
    v = params.values
    a1 = np.tanh(x @ v["ext_w1"] + v["ext_b1"])
    a2 = np.tanh(a1 @ v["ext_w2"] + v["ext_b2"])
    feats = a2 @ v["ext_w3"] + v["ext_b3"]
    return feats, ExtractorCache(x, a1, a2)


def extractor_backward(
    params: ModelParams, cache: ExtractorCache, d_feats: np.ndarray
) -> dict[str, np.ndarray]:
    v = params.values
    grads = {
        "ext_w3": cache.a2.T @ d_feats,
        "ext_b3": d_feats.sum(axis=0),
    }
    da2 = d_feats @ v["ext_w3"].T
    dz2 = da2 * (1.0 - cache.a2**2)
    grads["ext_w2"] = cache.a1.T @ dz2
    grads["ext_b2"] = dz2.sum(axis=0)
    da1 = dz2 @ v["ext_w2"].T
    dz1 = da1 * (1.0 - cache.a1**2)
    grads["ext_w1"] = cache.x.T @ dz1
    grads["ext_b1"] = dz1.sum(axis=0)
    return grads


def extract_features(params: ModelParams, image_crop: np.ndarray) -> np.ndarray:
    """Feature vector for a single crop; accepts (side, side) or flat input."""
    x = np.asarray(image_crop, dtype=np.float64).reshape(-1)
    if x.size != params.config.input_dim:
        raise ValueError(
            f"crop has {x.size} pixels, model expects {params.config.input_dim}"
        )
    feats, _ = extractor_forward(params, x[None, :])
    return feats[0]


def closed_logits(params: ModelParams, feats: np.ndarray) -> np.ndarray:
    """Closed-set logits; works on (64,) or (n, 64). Argmax ties go to the lowest index."""
    return feats @ params.values["cls_w"] + params.values["cls_b"]


def closed_backward(
    params: ModelParams, feats: np.ndarray, d_logits: np.ndarray
) -> tuple[np.ndarray, dict[str, np.ndarray]]:
    grads = {"cls_w": feats.T @ d_logits, "cls_b": d_logits.sum(axis=0)}
    return d_logits @ params.values["cls_w"].T, grads


def open_pair_logits(params: ModelParams, feats: np.ndarray) -> np.ndarray:
    """One-vs-all logit pairs, shape (..., K, 2)."""
    flat = feats @ params.values["open_w"] + params.values["open_b"]
    return flat.reshape(*flat.shape[:-1], params.config.num_classes, 2)


def open_backward(
    params: ModelParams, feats: np.ndarray, d_pairs: np.ndarray
) -> tuple[np.ndarray, dict[str, np.ndarray]]:
    d_flat = d_pairs.reshape(*d_pairs.shape[:-2], 2 * params.config.num_classes)
    grads = {"open_w": feats.T @ d_flat, "open_b": d_flat.sum(axis=0)}
    return d_flat @ params.values["open_w"].T, grads


def open_scores(params: ModelParams, feats: np.ndarray) -> OpenSetScores:
    """Open-set scores for a single feature vector."""
    return OpenSetScores.from_pairs(open_pair_logits(params, np.asarray(feats)))


@dataclass
class DiscriminatorCache:
    feats: np.ndarray
    h: np.ndarray
    probs: np.ndarray


def discriminator_forward(
    params: ModelParams, feats: np.ndarray
) -> tuple[np.ndarray, DiscriminatorCache]:
    """Probability-of-source per feature row; feats is (n, 64)."""
    v = params.values
    h = np.tanh(feats @ v["disc_w1"] + v["disc_b1"])
    a = (h @ v["disc_w2"] + v["disc_b2"])[:, 0]
    p = sigmoid(a)
    return p, DiscriminatorCache(feats, h, p)


def discriminator_backward(
    params: ModelParams, cache: DiscriminatorCache, d_presquash: np.ndarray
) -> tuple[np.ndarray, dict[str, np.ndarray]]:
    """Backward from d(loss)/d(pre-sigmoid activation); returns (d_feats, grads).

    d_feats carries no reversal here; the caller applies the -lam scale of the
    gradient reversal layer before sending it into the extractor.
    """
    v = params.values
    da = d_presquash[:, None]
    grads = {"disc_w2": cache.h.T @ da, "disc_b2": da.sum(axis=0)}
    dh = da @ v["disc_w2"].T
    dz = dh * (1.0 - cache.h**2)
    grads["disc_w1"] = cache.feats.T @ dz
    grads["disc_b1"] = dz.sum(axis=0)
    return dz @ v["disc_w1"].T, grads


def discriminate(
    params: ModelParams, feats: np.ndarray, grl: GradReversalConfig | None = None
) -> float:
    """Forward-pass probability that a single feature vector came from the source.

    The grl config does not affect the forward value; it scales gradients
    flowing back into the features during training.
    """
    p, _ = discriminator_forward(params, np.asarray(feats, dtype=np.float64)[None, :])
    return float(p[0])


# ---------------------------------------------------------------------------
# Checkpointing
# ---------------------------------------------------------------------------


def save_checkpoint(
    path: str | Path,
    params: ModelParams,
    seed: int | None = None,
    stage: int | None = None,
    step: int | None = None,
) -> Path:
    """Write a checkpoint directory: model.json manifest + params.bin (f64 LE)."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    cfg = params.config
    order = param_order(cfg)
    manifest = {
        "schema_version": 1,
        "input_dim": cfg.input_dim,
        "num_classes": cfg.num_classes,
        "hidden1": cfg.hidden1,
        "hidden2": cfg.hidden2,
        "feature_dim": cfg.feature_dim,
        "disc_hidden": cfg.disc_hidden,
        "seed": seed,
        "stage": stage,
        "step": step,
        "param_order": order,
        "param_shapes": {name: list(params[name].shape) for name in order},
    }
    (path / MODEL_MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True))
    flat = np.concatenate([params[name].reshape(-1) for name in order])
    (path / PARAMS_BIN).write_bytes(flat.astype("<f8").tobytes())
    return path


def load_checkpoint(path: str | Path) -> tuple[ModelParams, dict]:
    path = Path(path)
    manifest = json.loads((path / MODEL_MANIFEST).read_text())
    cfg = ModelConfig(
        input_dim=manifest["input_dim"],
        num_classes=manifest["num_classes"],
        hidden1=manifest["hidden1"],
        hidden2=manifest["hidden2"],
        feature_dim=manifest["feature_dim"],
        disc_hidden=manifest["disc_hidden"],
    )
    flat = np.frombuffer((path / PARAMS_BIN).read_bytes(), dtype="<f8")
    values: dict[str, np.ndarray] = {}
    offset = 0
    for name in manifest["param_order"]:
        shape = tuple(manifest["param_shapes"][name])
        size = int(np.prod(shape))
        values[name] = flat[offset : offset + size].reshape(shape).astype(np.float64)
        offset += size
    if offset != flat.size:
        raise ValueError("params.bin size does not match manifest shapes")
    return ModelParams(cfg, values), manifest
