"""Training losses: closed-set cross-entropy, one-vs-all top-k loss, open-set
entropy, the per-target unknown weight, and the adversarial domain loss.

Each loss comes with a matching gradient helper so the trainer can assemble
analytic gradients; the values are the quantities verified against brute-force
oracles in the tests.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import OpenSetScores, sigmoid, softplus

PROB_CLAMP = 1e-7


@dataclass
class LossBreakdown:
    """Per-step loss components and the weighted total."""

    closed_ce: float
    ova: float
    entropy: float
    domain_adv: float
    total: float
    w_ova: float
    w_ent: float
    w_dom: float

    @classmethod
    def build(
        cls,
        closed_ce: float,
        ova: float,
        entropy: float,
        domain_adv: float,
        w_ova: float,
        w_ent: float,
        w_dom: float,
    ) -> "LossBreakdown":
        total = closed_ce + w_ova * ova + w_ent * entropy + w_dom * domain_adv
        if not np.isfinite(total):
            raise FloatingPointError("non-finite loss")
        return cls(closed_ce, ova, entropy, domain_adv, total, w_ova, w_ent, w_dom)


def closed_set_ce(logits: np.ndarray, label: int) -> float:
    """Stable -log softmax(logits)[label]."""
    logits = np.asarray(logits, dtype=np.float64)
    if not 0 <= label < logits.shape[-1]:
        raise ValueError(f"label {label} out of range for {logits.shape[-1]} classes")
    m = logits.max()
    log_z = m + np.log(np.exp(logits - m).sum())
    return float(log_z - logits[label])


def grad_closed_set_ce(logits: np.ndarray, label: int) -> np.ndarray:
    logits = np.asarray(logits, dtype=np.float64)
    e = np.exp(logits - logits.max())
    p = e / e.sum()
    p[label] -= 1.0
    return p


def _select_topk_negatives(known_prob: np.ndarray, label: int, k: int) -> np.ndarray:
    """Indices of the m = min(k, K-1) hardest negatives (largest known_prob).

    Stable sort on the negated probabilities breaks ties toward the lowest
    class index.
    """
    kk = known_prob.shape[0]
    if not 0 <= label < kk:
        raise ValueError(f"label {label} out of range for {kk} classes")
    if k < 1:
        raise ValueError("k must be >= 1")
    m = min(k, kk - 1)
    masked = known_prob.copy()
    masked[label] = -np.inf
    order = np.argsort(-masked, kind="stable")
    return order[:m]


def ova_loss_topk(scores: OpenSetScores, label: int, k: int) -> float:
    """One-vs-all loss with the top-k hardest negative classes.

    -log p_label - (1/m) * sum over the m selected negatives of log(1 - p_j),
    where p_j is the known probability of class j. Log terms come from the
    logit difference, so saturated pairs stay finite.
    """
    neg_idx = _select_topk_negatives(scores.known_prob, label, k)
    s = scores.logit_pairs[:, 0] - scores.logit_pairs[:, 1]
    # log p = -softplus(-s), log(1 - p) = -softplus(s)
    loss = softplus(-s[label])
    if len(neg_idx):
        loss += softplus(s[neg_idx]).mean()
    return float(loss)


def grad_ova_loss_topk(scores: OpenSetScores, label: int, k: int) -> np.ndarray:
    """Gradient w.r.t. the (K, 2) logit pairs."""
    neg_idx = _select_topk_negatives(scores.known_prob, label, k)
    s = scores.logit_pairs[:, 0] - scores.logit_pairs[:, 1]
    p = sigmoid(s)
    ds = np.zeros_like(s)
    ds[label] = -(1.0 - p[label])
    if len(neg_idx):
        ds[neg_idx] += p[neg_idx] / len(neg_idx)
    d_pairs = np.zeros_like(scores.logit_pairs)
    d_pairs[:, 0] = ds
    d_pairs[:, 1] = -ds
    return d_pairs


def binary_entropy(p: np.ndarray) -> np.ndarray:
    """Elementwise H_b(p) with the 0*log(0) := 0 convention."""
    p = np.asarray(p, dtype=np.float64)
    out = np.zeros_like(p)
    pos = p > 0
    out[pos] -= p[pos] * np.log(p[pos])
    lt1 = p < 1
    out[lt1] -= (1.0 - p[lt1]) * np.log(1.0 - p[lt1])
    return out


def open_entropy(scores: OpenSetScores) -> float:
    """Mean binary entropy across the K known-vs-unknown heads."""
    return float(binary_entropy(scores.known_prob).mean())


def grad_open_entropy(scores: OpenSetScores) -> np.ndarray:
    """Gradient w.r.t. the (K, 2) logit pairs; vanishes at saturated heads."""
    s = scores.logit_pairs[:, 0] - scores.logit_pairs[:, 1]
    kk = s.shape[0]
    # dH/ds = -s * sigma(s) * sigma(-s); both factors computed stably.
    ds = -s * sigmoid(s) * sigmoid(-s) / kk
    d_pairs = np.zeros_like(scores.logit_pairs)
    d_pairs[:, 0] = ds
    d_pairs[:, 1] = -ds
    return d_pairs


def unknown_weight(scores: OpenSetScores, closed_logits: np.ndarray) -> float:
    """Probability the sample is unknown: 1 - known_prob at the closed-set argmax.

    Treated as a constant during differentiation; no gradient flows through it
    into the open-set head.
    """
    y_hat = int(np.argmax(closed_logits))
    return float(1.0 - scores.known_prob[y_hat])


def domain_adversarial_loss(
    d_source: np.ndarray, d_target: np.ndarray, w_t: np.ndarray
) -> float:
    """Adversarial alignment loss over a batch of discriminator outputs.

    -mean log D(source) - mean w_t * log(1 - D(target)), with probabilities
    clamped away from {0, 1} before the logs.
    """
    d_source = np.asarray(d_source, dtype=np.float64)
    d_target = np.asarray(d_target, dtype=np.float64)
    w_t = np.asarray(w_t, dtype=np.float64)
    if d_target.shape != w_t.shape:
        raise ValueError("d_target and w_t must have the same length")
    ds = np.clip(d_source, PROB_CLAMP, 1.0 - PROB_CLAMP)
    dt = np.clip(d_target, PROB_CLAMP, 1.0 - PROB_CLAMP)
    return float(-np.mean(np.log(ds)) - np.mean(w_t * np.log(1.0 - dt)))
