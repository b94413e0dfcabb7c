"""Inference and metrics: known/unknown decision rule with optional 5-crop
averaging, accuracy over known categories, and rank-based AUROC.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .model import ModelParams, extractor_forward, closed_logits, open_pair_logits, pair_known_prob
from .synth import UNKNOWN, LabeledImage, center_crop, five_crops


@dataclass
class Prediction:
    predicted: int  # class index, or UNKNOWN
    unknown_score: float
    closed_probs: np.ndarray  # crop-averaged (K,)


@dataclass
class MetricsReport:
    acc: float  # percentage over ground-truth-known samples
    auroc: float
    known_correct: int
    known_total: int
    unknown_total: int
    threshold: float

    def to_dict(self) -> dict:
        return {
            "acc": self.acc,
            "auroc": self.auroc,
            "counts": {
                "known_correct": self.known_correct,
                "known_total": self.known_total,
                "unknown_total": self.unknown_total,
            },
            "threshold": self.threshold,
        }

    def to_json(self, path: str | Path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True))
        return path

    @classmethod
    def from_json(cls, path: str | Path) -> "MetricsReport":
        d = json.loads(Path(path).read_text())
        return cls(
            acc=d["acc"],
            auroc=d["auroc"],
            known_correct=d["counts"]["known_correct"],
            known_total=d["counts"]["known_total"],
            unknown_total=d["counts"]["unknown_total"],
            threshold=d["threshold"],
        )

    CSV_HEADER = ["acc", "auroc", "known_correct", "known_total", "unknown_total", "threshold"]

    def csv_row(self) -> list:
        return [repr(self.acc), repr(self.auroc), self.known_correct,
                self.known_total, self.unknown_total, repr(self.threshold)]

    def to_csv(self, path: str | Path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(self.CSV_HEADER)
            writer.writerow(self.csv_row())
        return path


def _softmax_rows(logits: np.ndarray) -> np.ndarray:
    e = np.exp(logits - logits.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def _anchored_mean(rows: np.ndarray) -> np.ndarray:
    # Row mean that is exact when all rows coincide (identical crops), so
    # multi-crop output reduces to single-crop output bit for bit.
    return rows[0] + (rows - rows[0]).mean(axis=0)


def predict(
    params: ModelParams,
    image: LabeledImage,
    use_five_crop: bool = True,
    threshold: float = 0.5,
    crop_side: int | None = None,
) -> Prediction:
    """Mean-then-decide inference over crops.

    Closed softmax probabilities and open-set known probabilities are averaged
    across crops first; the class decision and the unknown score come from the
    averages. predicted == UNKNOWN iff unknown_score >= threshold.
    """
    params.assert_finite()
    if crop_side is None:
        crop_side = int(round(np.sqrt(params.config.input_dim)))
    if use_five_crop:
        crops = [c.pixels for c in five_crops(image, crop_side)]
    else:
        crops = [center_crop(image.pixels, crop_side)]
    x = np.stack([c.reshape(-1) for c in crops])
    feats, _ = extractor_forward(params, x)
    closed_probs = _anchored_mean(_softmax_rows(closed_logits(params, feats)))
    known_probs = _anchored_mean(pair_known_prob(open_pair_logits(params, feats)))
    y_hat = int(np.argmax(closed_probs))
    unknown_score = float(1.0 - known_probs[y_hat])
    predicted = UNKNOWN if unknown_score >= threshold else y_hat
    return Prediction(predicted, unknown_score, closed_probs)


def accuracy_known(predicted: Sequence[int], ground_truth: Sequence[LabeledImage]) -> float:
    """Percent correct over ground-truth-known samples only.

    Predicting UNKNOWN on a known sample counts as an error; ground-truth
    unknown samples are excluded from numerator and denominator.
    """
    if len(predicted) != len(ground_truth):
        raise ValueError("predictions and ground truth must be aligned")
    correct = 0
    total = 0
    for pred, img in zip(predicted, ground_truth):
        if img.is_unknown:
            continue
        total += 1
        if pred == img.label:
            correct += 1
    if total == 0:
        raise ValueError("no ground-truth-known samples")
    return 100.0 * correct / total


def _midranks(values: np.ndarray) -> np.ndarray:
    """1-based ranks with ties assigned the mean rank of their group."""
    order = np.argsort(values, kind="mergesort")
    sorted_vals = values[order]
    ranks = np.empty(len(values), dtype=np.float64)
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def auroc(unknown_scores: Sequence[float], is_unknown: Sequence[bool]) -> float:
    """Probability a random (unknown, known) pair is ranked correctly, ties at 1/2.

    Rank-statistic form of pair counting: with midranks R over all scores,
    AUROC = (sum of unknown ranks - n_u(n_u+1)/2) / (n_u * n_k).
    """
    scores = np.asarray(unknown_scores, dtype=np.float64)
    flags = np.asarray(is_unknown, dtype=bool)
    if scores.shape != flags.shape:
        raise ValueError("scores and flags must be aligned")
    n_u = int(flags.sum())
    n_k = int((~flags).sum())
    if n_u == 0 or n_k == 0:
        raise ValueError("need at least one unknown and one known sample")
    ranks = _midranks(scores)
    u_stat = ranks[flags].sum() - n_u * (n_u + 1) / 2.0
    return float(u_stat / (n_u * n_k))


def evaluate(
    params: ModelParams,
    target_test: list[LabeledImage],
    use_five_crop: bool = True,
    threshold: float = 0.5,
    crop_side: int | None = None,
) -> MetricsReport:
    """Run predict over a labeled target test set and assemble the report."""
    preds = [predict(params, img, use_five_crop, threshold, crop_side) for img in target_test]
    predicted = [p.predicted for p in preds]
    scores = [p.unknown_score for p in preds]
    flags = [img.is_unknown for img in target_test]
    acc = accuracy_known(predicted, target_test)
    area = auroc(scores, flags)
    known_total = sum(1 for img in target_test if not img.is_unknown)
    known_correct = sum(
        1 for pred, img in zip(predicted, target_test) if not img.is_unknown and pred == img.label
    )
    return MetricsReport(
        acc=acc,
        auroc=area,
        known_correct=known_correct,
        known_total=known_total,
        unknown_total=len(target_test) - known_total,
        threshold=threshold,
    )


def dump_scores(
    path: str | Path,
    predictions: Sequence[Prediction],
    ground_truth: Sequence[LabeledImage],
) -> Path:
    """Per-sample score file for external ROC tooling: id, score, predicted, truth."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "unknown_score", "predicted", "ground_truth"])
        for i, (pred, img) in enumerate(zip(predictions, ground_truth)):
            truth = UNKNOWN if img.is_unknown else img.label
            writer.writerow([i, repr(pred.unknown_score), pred.predicted, truth])
    return path
