"""AUROC against O(n^2) pair counting, accuracy semantics, and the
mean-then-decide prediction contract.
"""

import csv
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from unidalab.metrics import (
    MetricsReport,
    accuracy_known,
    auroc,
    dump_scores,
    evaluate,
    predict,
)
from unidalab.model import (
    ModelConfig,
    closed_logits,
    extractor_forward,
    init_params,
    open_pair_logits,
    pair_known_prob,
)
from unidalab.synth import SOURCE, TARGET, UNKNOWN, DatasetSpec, LabeledImage, five_crops, generate_dataset

TINY = ModelConfig(input_dim=36, num_classes=4, hidden1=10, hidden2=8, feature_dim=6, disc_hidden=5)


def auroc_bruteforce(scores, flags):
    """O(n^2) pair counting with ties worth 1/2."""
    scores = np.asarray(scores, dtype=np.float64)
    flags = np.asarray(flags, dtype=bool)
    total = 0.0
    pairs = 0
    for su in scores[flags]:
        for sk in scores[~flags]:
            pairs += 1
            if su > sk:
                total += 1.0
            elif su == sk:
                total += 0.5
    return total / pairs


class TestAuroc:
    def test_perfect_separation(self):
        assert auroc([0.9, 0.8, 0.7, 0.1, 0.2], [True, True, True, False, False]) == 1.0

    def test_all_ties(self):
        assert auroc([0.3] * 6, [True, False, True, False, False, True]) == 0.5

    def test_worked_example(self):
        got = auroc([0.9, 0.3, 0.4, 0.1], [True, True, False, False])
        assert got == pytest.approx(0.75, abs=1e-12)

    def test_matches_pair_counting_with_heavy_ties(self):
        rng = np.random.default_rng(123)
        for trial in range(50):
            n = int(rng.integers(5, 120))
            # coarse grid forces many ties
            scores = rng.integers(0, 6, n) / 5.0
            flags = rng.random(n) < 0.4
            if flags.all() or not flags.any():
                flags[0] = True
                flags[-1] = False
            assert auroc(scores, flags) == pytest.approx(
                auroc_bruteforce(scores, flags), abs=1e-12
            )

    def test_invariant_under_monotone_transforms(self):
        rng = np.random.default_rng(9)
        scores = rng.integers(0, 9, 60) / 8.0
        flags = rng.random(60) < 0.5
        flags[0], flags[-1] = True, False
        base = auroc(scores, flags)
        for transform in (lambda x: 3.5 * x + 1.25, lambda x: x**3, np.tanh, np.exp):
            assert auroc(transform(np.asarray(scores)), flags) == pytest.approx(base, abs=1e-12)

    def test_degenerate_inputs_rejected(self):
        with pytest.raises(ValueError):
            auroc([0.5, 0.4], [True, True])
        with pytest.raises(ValueError):
            auroc([0.5, 0.4], [False, False])


class TestAccuracyKnown:
    def _img(self, label, unknown=False):
        return LabeledImage(np.zeros((2, 2)), label, TARGET, unknown)

    def test_all_correct(self):
        truth = [self._img(0), self._img(1)]
        assert accuracy_known([0, 1], truth) == 100.0

    def test_unknown_prediction_counts_as_error(self):
        truth = [self._img(0), self._img(1), self._img(1)]
        got = accuracy_known([0, UNKNOWN, 1], truth)
        assert got == pytest.approx(200.0 / 3.0, abs=1e-9)

    def test_ground_truth_unknowns_excluded(self):
        truth = [self._img(0), self._img(9, unknown=True), self._img(1)]
        assert accuracy_known([0, 0, 1], truth) == 100.0
        assert accuracy_known([0, UNKNOWN, 1], truth) == 100.0

    def test_permutation_invariance(self):
        rng = np.random.default_rng(5)
        truth = [self._img(int(rng.integers(0, 3)), bool(rng.random() < 0.3)) for _ in range(30)]
        truth[0] = self._img(0)
        preds = [int(rng.integers(-1, 3)) for _ in range(30)]
        base = accuracy_known(preds, truth)
        order = rng.permutation(30)
        assert accuracy_known([preds[i] for i in order], [truth[i] for i in order]) == pytest.approx(base)

    def test_empty_known_subset_rejected(self):
        with pytest.raises(ValueError):
            accuracy_known([0], [self._img(5, unknown=True)])

    def test_misaligned_lists_rejected(self):
        with pytest.raises(ValueError):
            accuracy_known([0, 1], [self._img(0)])


class TestPredict:
    def test_constant_image_five_crop_equals_single(self):
        params = init_params(TINY, 0)
        img = LabeledImage(np.full((8, 8), 0.4), 0, TARGET)
        five = predict(params, img, use_five_crop=True, crop_side=6)
        one = predict(params, img, use_five_crop=False, crop_side=6)
        assert five.predicted == one.predicted
        assert five.unknown_score == one.unknown_score
        assert np.array_equal(five.closed_probs, one.closed_probs)

    def test_threshold_extremes(self):
        params = init_params(TINY, 1)
        rng = np.random.default_rng(2)
        for _ in range(10):
            img = LabeledImage(rng.uniform(0, 1, (8, 8)), 0, TARGET)
            assert predict(params, img, threshold=0.0, crop_side=6).predicted == UNKNOWN
            assert predict(params, img, threshold=1.01, crop_side=6).predicted != UNKNOWN

    def test_prediction_invariant(self):
        params = init_params(TINY, 3)
        rng = np.random.default_rng(4)
        for _ in range(20):
            img = LabeledImage(rng.uniform(0, 1, (8, 8)), 0, TARGET)
            p = predict(params, img, threshold=0.5, crop_side=6)
            assert (p.predicted == UNKNOWN) == (p.unknown_score >= 0.5)

    def test_mean_then_decide_against_oracle(self):
        """Probabilities are averaged over crops before the argmax/threshold;
        verified against a direct reimplementation, including at least one
        instance where some crop disagrees with the averaged decision."""
        rng = np.random.default_rng(8)
        disagreement_seen = False
        for trial in range(40):
            params = init_params(TINY, 100 + trial)
            img = LabeledImage(rng.uniform(0, 1, (8, 8)), 0, TARGET)
            got = predict(params, img, use_five_crop=True, threshold=0.5, crop_side=6)
            crops = np.stack([c.pixels.reshape(-1) for c in five_crops(img, 6)])
            feats, _ = extractor_forward(params, crops)
            logits = closed_logits(params, feats)
            e = np.exp(logits - logits.max(axis=1, keepdims=True))
            probs = (e / e.sum(axis=1, keepdims=True))
            kp = pair_known_prob(open_pair_logits(params, feats))
            mean_probs = probs.mean(axis=0)
            y = int(np.argmax(mean_probs))
            score = 1.0 - kp.mean(axis=0)[y]
            np.testing.assert_allclose(got.closed_probs, mean_probs, rtol=0, atol=1e-12)
            assert got.unknown_score == pytest.approx(score, abs=1e-12)
            assert got.predicted == (UNKNOWN if score >= 0.5 else y)
            if any(int(np.argmax(row)) != y for row in probs):
                disagreement_seen = True
        assert disagreement_seen

    def test_non_finite_params_rejected(self):
        params = init_params(TINY, 0)
        params.values["cls_w"][0, 0] = np.nan
        with pytest.raises(FloatingPointError):
            predict(params, LabeledImage(np.zeros((8, 8)), 0, TARGET), crop_side=6)


class TestEvaluate:
    SPEC = DatasetSpec(
        total_classes=6, shared_classes=3, source_private=2, target_private=1,
        image_side=12, crop_side=6, samples_per_class_source=3,
        samples_per_class_target=6, seed=11,
    )

    def test_deterministic(self):
        _, _, tte = generate_dataset(self.SPEC)
        params = init_params(
            ModelConfig(input_dim=36, num_classes=5, hidden1=10, hidden2=8, feature_dim=6), 0
        )
        a = evaluate(params, tte, crop_side=6)
        b = evaluate(params, tte, crop_side=6)
        assert a == b

    def test_untrained_model_auroc_near_half(self):
        _, _, tte = generate_dataset(self.SPEC)
        vals = []
        for seed in range(5):
            params = init_params(
                ModelConfig(input_dim=36, num_classes=5, hidden1=10, hidden2=8, feature_dim=6), seed
            )
            vals.append(evaluate(params, tte, crop_side=6).auroc)
        assert abs(float(np.mean(vals)) - 0.5) < 0.1

    def test_report_shape_and_json(self, tmp_path):
        _, _, tte = generate_dataset(self.SPEC)
        params = init_params(
            ModelConfig(input_dim=36, num_classes=5, hidden1=10, hidden2=8, feature_dim=6), 1
        )
        report = evaluate(params, tte, threshold=0.5, crop_side=6)
        assert 0 <= report.acc <= 100
        assert 0 <= report.auroc <= 1
        assert report.known_total == 18 and report.unknown_total == 6
        path = report.to_json(tmp_path / "m.json")
        d = json.loads(path.read_text())
        assert set(d) == {"acc", "auroc", "counts", "threshold"}
        assert set(d["counts"]) == {"known_correct", "known_total", "unknown_total"}
        assert MetricsReport.from_json(path) == report

    def test_report_csv_row(self, tmp_path):
        _, _, tte = generate_dataset(self.SPEC)
        params = init_params(
            ModelConfig(input_dim=36, num_classes=5, hidden1=10, hidden2=8, feature_dim=6), 4
        )
        report = evaluate(params, tte, crop_side=6)
        path = report.to_csv(tmp_path / "m.csv")
        with path.open() as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["acc", "auroc", "known_correct", "known_total", "unknown_total", "threshold"]
        assert float(rows[1][0]) == report.acc
        assert float(rows[1][1]) == report.auroc


class TestScoreDump:
    def test_format(self, tmp_path):
        _, _, tte = generate_dataset(TestEvaluate.SPEC)
        params = init_params(
            ModelConfig(input_dim=36, num_classes=5, hidden1=10, hidden2=8, feature_dim=6), 2
        )
        preds = [predict(params, img, crop_side=6) for img in tte[:10]]
        path = dump_scores(tmp_path / "scores.csv", preds, tte[:10])
        with path.open() as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["id", "unknown_score", "predicted", "ground_truth"]
        assert len(rows) == 11
        for i, row in enumerate(rows[1:]):
            assert int(row[0]) == i
            assert 0.0 <= float(row[1]) <= 1.0
            img = tte[i]
            assert int(row[3]) == (UNKNOWN if img.is_unknown else img.label)
