"""Synthetic benchmark: label-set arithmetic, determinism, shift semantics,
augmentation and crop contracts, and the dataset export format.
"""

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from unidalab.synth import (
    SOURCE,
    TARGET,
    UNKNOWN,
    Batch,
    DatasetSpec,
    DomainShift,
    LabeledImage,
    augment_source,
    center_crop,
    erase_square,
    five_crops,
    generate_dataset,
    intensity_jitter,
    load_dataset,
    make_batch,
    render_base,
    save_dataset,
)

SMALL_SPEC = DatasetSpec(
    total_classes=6, shared_classes=3, source_private=2, target_private=1,
    image_side=16, crop_side=12, samples_per_class_source=4,
    samples_per_class_target=4, seed=5,
)


class TestSpecValidation:
    def test_partition_must_hold(self):
        with pytest.raises(ValueError):
            DatasetSpec(total_classes=10, shared_classes=5, source_private=3, target_private=3).validate()

    def test_crop_cannot_exceed_image(self):
        with pytest.raises(ValueError):
            DatasetSpec(image_side=16, crop_side=17).validate()

    def test_shift_invariants(self):
        with pytest.raises(ValueError):
            DomainShift(intensity_scale=0.0).validate()
        with pytest.raises(ValueError):
            DomainShift(noise_sigma_source=-0.1).validate()

    def test_generate_rejects_bad_spec(self):
        bad = DatasetSpec(total_classes=4, shared_classes=1, source_private=1, target_private=1)
        with pytest.raises(ValueError):
            generate_dataset(bad)


class TestLabelSets:
    def test_default_partition_arithmetic(self):
        spec = DatasetSpec()  # 10 = 5 shared + 3 source-private + 2 novel
        src, ttr, tte = generate_dataset(spec)
        src_labels = {i.label for i in src}
        tte_labels = {i.label for i in tte}
        assert len(src_labels) == 8
        assert len(tte_labels) == 7
        assert len(src_labels & tte_labels) == 5

    @given(
        shared=st.integers(1, 4),
        src_priv=st.integers(0, 3),
        tgt_priv=st.integers(0, 3),
    )
    @settings(max_examples=20, deadline=None)
    def test_partition_property(self, shared, src_priv, tgt_priv):
        spec = DatasetSpec(
            total_classes=shared + src_priv + tgt_priv,
            shared_classes=shared, source_private=src_priv, target_private=tgt_priv,
            image_side=12, crop_side=8,
            samples_per_class_source=2, samples_per_class_target=2, seed=1,
        )
        assert set(spec.source_labels) & set(spec.target_labels) == set(spec.shared_labels)
        assert len(spec.source_labels) + spec.target_private == spec.total_classes

    def test_hidden_and_test_labels(self):
        src, ttr, tte = generate_dataset(SMALL_SPEC)
        assert all(i.label == UNKNOWN and not i.is_unknown for i in ttr)
        for img in tte:
            assert img.is_unknown == (img.label in SMALL_SPEC.target_private_labels)


class TestDeterminismAndShift:
    def test_bit_identical_regeneration(self):
        a = generate_dataset(SMALL_SPEC)
        b = generate_dataset(SMALL_SPEC)
        for split_a, split_b in zip(a, b):
            for x, y in zip(split_a, split_b):
                assert np.array_equal(x.pixels, y.pixels)
                assert (x.label, x.domain, x.is_unknown) == (y.label, y.domain, y.is_unknown)

    def test_different_seed_changes_pixels(self):
        a, _, _ = generate_dataset(SMALL_SPEC)
        b, _, _ = generate_dataset(DatasetSpec(**{**SMALL_SPEC.__dict__, "seed": 6}))
        assert not np.array_equal(a[0].pixels, b[0].pixels)

    def test_zero_shift_target_equals_source_rendering(self):
        shift = DomainShift(intensity_scale=1.0, intensity_offset=0.0,
                            noise_sigma_source=0.0, noise_sigma_target=0.0,
                            blob_translation=0)
        spec = DatasetSpec(**{**SMALL_SPEC.__dict__, "shift": shift})
        src, ttr, _ = generate_dataset(spec)
        shared = set(spec.shared_labels)
        src_shared = [i for i in src if i.label in shared]
        n = spec.samples_per_class_target
        for c in sorted(shared):
            for draw in range(n):
                target_img = ttr[spec.target_labels.index(c) * n + draw]
                assert np.array_equal(target_img.pixels, render_base(spec, c, draw))
        # with source noise off as well, the source image matches bit for bit
        for c in sorted(shared):
            for draw in range(min(n, spec.samples_per_class_source)):
                s = src_shared[list(sorted(shared)).index(c) * spec.samples_per_class_source + draw]
                t = ttr[spec.target_labels.index(c) * n + draw]
                assert np.array_equal(s.pixels, t.pixels)

    def test_pixels_in_unit_interval(self):
        for split in generate_dataset(SMALL_SPEC):
            for img in split:
                assert img.pixels.min() >= 0.0 and img.pixels.max() <= 1.0


class TestAugmentation:
    def test_erase_square_counts(self):
        out = erase_square(np.ones((16, 16)), 0, 0, 4)
        assert (out == 0).sum() == 16
        assert (out == 1).sum() == 16 * 16 - 16

    def test_jitter_identity(self):
        img = np.random.default_rng(0).uniform(0, 1, (8, 8))
        assert np.array_equal(intensity_jitter(img, 1.0), img)

    def test_zero_image_fixed_point(self):
        img = LabeledImage(np.zeros((16, 16)), 0, SOURCE)
        for seed in range(10):
            out = augment_source(img, np.random.default_rng(seed))
            assert np.array_equal(out.pixels, np.zeros((16, 16)))

    def test_rejects_target_domain(self):
        img = LabeledImage(np.zeros((8, 8)), 0, TARGET)
        with pytest.raises(ValueError):
            augment_source(img, np.random.default_rng(0))

    def test_label_preserved_and_range(self):
        rng = np.random.default_rng(3)
        img = LabeledImage(rng.uniform(0, 1, (16, 16)), 4, SOURCE)
        for _ in range(25):
            out = augment_source(img, rng)
            assert out.label == 4 and out.domain == SOURCE
            assert out.pixels.min() >= 0.0 and out.pixels.max() <= 1.0

    def test_does_not_mutate_input(self):
        rng = np.random.default_rng(4)
        pixels = rng.uniform(0, 1, (16, 16))
        img = LabeledImage(pixels.copy(), 0, SOURCE)
        for _ in range(10):
            augment_source(img, rng)
        assert np.array_equal(img.pixels, pixels)


class TestFiveCrops:
    def test_anchor_arithmetic_32_28(self):
        img = LabeledImage(np.arange(32 * 32, dtype=float).reshape(32, 32) / 1024, 0, SOURCE)
        crops = five_crops(img, 28)
        anchors = [(0, 0), (0, 4), (4, 0), (4, 4), (2, 2)]
        assert len(crops) == 5
        for c, (r, col) in zip(crops, anchors):
            assert np.array_equal(c.pixels, img.pixels[r : r + 28, col : col + 28])

    def test_full_size_crop_degenerates(self):
        img = LabeledImage(np.random.default_rng(1).uniform(0, 1, (16, 16)), 2, TARGET, True)
        for c in five_crops(img, 16):
            assert np.array_equal(c.pixels, img.pixels)
            assert (c.label, c.domain, c.is_unknown) == (2, TARGET, True)

    def test_constant_image_crops_constant(self):
        img = LabeledImage(np.full((16, 16), 0.37), 0, SOURCE)
        for c in five_crops(img, 11):
            assert np.all(c.pixels == 0.37)

    def test_rejects_oversized_crop(self):
        img = LabeledImage(np.zeros((8, 8)), 0, SOURCE)
        with pytest.raises(ValueError):
            five_crops(img, 9)

    @given(side=st.integers(4, 20), crop=st.integers(1, 20), data=st.data())
    @settings(max_examples=40, deadline=None)
    def test_exact_subwindows_against_slicing_oracle(self, side, crop, data):
        if crop > side:
            crop = side
        rng = np.random.default_rng(data.draw(st.integers(0, 2**31)))
        img = LabeledImage(rng.uniform(0, 1, (side, side)), 0, SOURCE)
        crops = five_crops(img, crop)
        assert len(crops) == 5
        s, c = side, crop
        mid = (s - c) // 2
        oracle = [
            img.pixels[0:c, 0:c],
            img.pixels[0:c, s - c : s],
            img.pixels[s - c : s, 0:c],
            img.pixels[s - c : s, s - c : s],
            img.pixels[mid : mid + c, mid : mid + c],
        ]
        for got, want in zip(crops, oracle):
            assert np.array_equal(got.pixels, want)


class TestMakeBatch:
    def test_batch_sizes(self):
        src, ttr, _ = generate_dataset(SMALL_SPEC)
        rng = np.random.default_rng(0)
        batch = make_batch(src, ttr, 16, rng, crop_side=12)
        assert len(batch.source_images) == 16
        assert len(batch.target_images) == 16
        for img in batch.source_images + batch.target_images:
            assert img.pixels.shape == (12, 12)

    def test_batch_size_one(self):
        src, ttr, _ = generate_dataset(SMALL_SPEC)
        batch = make_batch(src, ttr, 1, np.random.default_rng(1), crop_side=12)
        assert len(batch.source_images) == 1 and len(batch.target_images) == 1

    def test_deterministic_given_rng_state(self):
        src, ttr, _ = generate_dataset(SMALL_SPEC)
        a = make_batch(src, ttr, 8, np.random.default_rng(42), crop_side=12)
        b = make_batch(src, ttr, 8, np.random.default_rng(42), crop_side=12)
        for x, y in zip(a.source_images + a.target_images, b.source_images + b.target_images):
            assert np.array_equal(x.pixels, y.pixels) and x.label == y.label

    def test_target_items_are_untouched_center_crops(self):
        """Augmentation must never reach the target path."""
        src, ttr, _ = generate_dataset(SMALL_SPEC)
        batch = make_batch(src, ttr, 32, np.random.default_rng(7), crop_side=12)
        allowed = {center_crop(i.pixels, 12).tobytes() for i in ttr}
        for img in batch.target_images:
            assert img.pixels.tobytes() in allowed

    def test_rejects_empty_sets(self):
        src, ttr, _ = generate_dataset(SMALL_SPEC)
        with pytest.raises(ValueError):
            make_batch([], ttr, 4, np.random.default_rng(0), crop_side=12)
        with pytest.raises(ValueError):
            make_batch(src, [], 4, np.random.default_rng(0), crop_side=12)


class TestExportImport:
    def test_roundtrip(self, tmp_path):
        src, ttr, tte = generate_dataset(SMALL_SPEC)
        out = save_dataset(tmp_path / "ds", SMALL_SPEC, src, ttr, tte)
        spec2, src2, ttr2, tte2 = load_dataset(out)
        assert spec2 == SMALL_SPEC
        for orig, loaded in zip((src, ttr, tte), (src2, ttr2, tte2)):
            assert len(orig) == len(loaded)
            for x, y in zip(orig, loaded):
                assert np.array_equal(x.pixels, y.pixels)
                assert x.domain == y.domain
        # hidden labels stay hidden; unknown test labels come back as the sentinel
        assert all(i.label == UNKNOWN for i in ttr2)
        for x, y in zip(tte, tte2):
            assert y.is_unknown == x.is_unknown
            assert y.label == (UNKNOWN if x.is_unknown else x.label)

    def test_binary_format(self, tmp_path):
        src, ttr, tte = generate_dataset(SMALL_SPEC)
        out = save_dataset(tmp_path / "ds", SMALL_SPEC, src, ttr, tte)
        n_total = len(src) + len(ttr) + len(tte)
        raw = (out / "pixels.bin").read_bytes()
        assert len(raw) == n_total * SMALL_SPEC.image_side**2 * 8
        first_row = np.frombuffer(raw, dtype="<f8", count=SMALL_SPEC.image_side**2)
        assert np.array_equal(first_row, src[0].pixels.reshape(-1))
        labels = (out / "labels.txt").read_text().splitlines()
        assert len(labels) == n_total
        assert all(int(x) >= -1 for x in labels)
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["counts"] == {
            "source": len(src), "target_train": len(ttr), "target_test": len(tte)
        }
        assert manifest["seed"] == SMALL_SPEC.seed
