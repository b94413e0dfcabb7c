"""Seeded synthetic benchmark with shared, missing, and novel classes under domain shift.

Each class renders as a Gaussian blob at a class-specific position on a circle,
so blob location encodes the label. Source and target share the per-draw
rendering; target images additionally pass through a fixed intensity /
translation / noise shift, which is what the adaptation has to undo.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

SOURCE = "source"
TARGET = "target"

# Label sentinel for hidden or unknown ground truth.
UNKNOWN = -1

# Salts keep the render / noise streams independent per (class, draw) so the
# same draw index renders identically in both domains.
_RENDER_SALT = 11
_SOURCE_NOISE_SALT = 12
_TARGET_NOISE_SALT = 13

MANIFEST_NAME = "manifest.json"
PIXELS_NAME = "pixels.bin"
LABELS_NAME = "labels.txt"


@dataclass(frozen=True)
class DomainShift:
    """Fixed transform applied to every target-domain image."""

    intensity_scale: float = 0.7
    intensity_offset: float = 0.1
    noise_sigma_source: float = 0.05
    noise_sigma_target: float = 0.15
    blob_translation: int = 3

    def validate(self) -> None:
        if self.intensity_scale <= 0:
            raise ValueError("intensity_scale must be > 0")
        if self.noise_sigma_source < 0 or self.noise_sigma_target < 0:
            raise ValueError("noise sigmas must be >= 0")


@dataclass(frozen=True)
class DatasetSpec:
    """Benchmark layout: class partition, image geometry, shift, and seed.

    Classes 0..shared-1 are shared between domains, the next source_private
    classes exist only in the source, and the last target_private classes are
    the novel (unknown) target classes.
    """

    total_classes: int = 10
    shared_classes: int = 5
    source_private: int = 3
    target_private: int = 2
    image_side: int = 32
    crop_side: int = 28
    samples_per_class_source: int = 60
    samples_per_class_target: int = 60
    shift: DomainShift = field(default_factory=DomainShift)
    seed: int = 0

    def validate(self) -> None:
        if self.shared_classes + self.source_private + self.target_private != self.total_classes:
            raise ValueError("shared + source_private + target_private must equal total_classes")
        if min(self.shared_classes, self.total_classes) <= 0:
            raise ValueError("need at least one shared class")
        if self.source_private < 0 or self.target_private < 0:
            raise ValueError("private class counts must be >= 0")
        if self.crop_side > self.image_side:
            raise ValueError("image_side must be >= crop_side")
        if self.crop_side <= 0:
            raise ValueError("crop_side must be positive")
        if self.samples_per_class_source <= 0 or self.samples_per_class_target <= 0:
            raise ValueError("samples per class must be positive")
        if self.seed < 0:
            raise ValueError("seed must be a non-negative integer")
        self.shift.validate()

    @property
    def shared_labels(self) -> range:
        return range(self.shared_classes)

    @property
    def source_private_labels(self) -> range:
        return range(self.shared_classes, self.shared_classes + self.source_private)

    @property
    def target_private_labels(self) -> range:
        return range(self.shared_classes + self.source_private, self.total_classes)

    @property
    def source_labels(self) -> list[int]:
        return list(self.shared_labels) + list(self.source_private_labels)

    @property
    def target_labels(self) -> list[int]:
        return list(self.shared_labels) + list(self.target_private_labels)

    @property
    def num_source_classes(self) -> int:
        """K: number of classes the model is trained on."""
        return self.shared_classes + self.source_private


@dataclass
class LabeledImage:
    """Single-channel image with label, domain tag, and unknown ground truth."""

    pixels: np.ndarray  # (side, side) float64 in [0, 1]
    label: int
    domain: str
    is_unknown: bool = False


@dataclass
class Batch:
    """One training step worth of cropped images from both domains."""

    source_images: list[LabeledImage]
    target_images: list[LabeledImage]


def _draw_rng(seed: int, salt: int, label: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=(seed, salt, label, index)))


def render_base(spec: DatasetSpec, label: int, draw_index: int, translation: int = 0) -> np.ndarray:
    """Clean blob rendering shared by both domains for a given class and draw.

    Blob centers sit on a circle of radius image_side/3 around the image
    center at angle 2*pi*label/total_classes, plus a small per-draw jitter.
    """
    rng = _draw_rng(spec.seed, _RENDER_SALT, label, draw_index)
    side = spec.image_side
    center = (side - 1) / 2.0
    radius = side / 3.0
    angle = 2.0 * np.pi * label / spec.total_classes
    # Translation is applied along columns only; keeping its magnitude under
    # half the inter-class spacing means a shifted blob stays nearest its own
    # class position.
    cy = center + radius * np.sin(angle) + rng.uniform(-0.5, 0.5)
    cx = center + radius * np.cos(angle) + rng.uniform(-0.5, 0.5) + translation
    sigma = (side / 12.0) * rng.uniform(0.9, 1.1)
    amplitude = rng.uniform(0.7, 1.0)
    # Per-draw ambient level: both domains vary their background, so the
    # class signal is the blob position, not the background statistics.
    ambient = rng.uniform(0.0, 0.15)
    rows = np.arange(side, dtype=np.float64)[:, None]
    cols = np.arange(side, dtype=np.float64)[None, :]
    blob = np.exp(-((rows - cy) ** 2 + (cols - cx) ** 2) / (2.0 * sigma**2))
    return np.clip(ambient + amplitude * blob, 0.0, 1.0)


def _source_pixels(spec: DatasetSpec, label: int, draw_index: int) -> np.ndarray:
    img = render_base(spec, label, draw_index)
    sigma = spec.shift.noise_sigma_source
    if sigma > 0:
        img = img + _draw_rng(spec.seed, _SOURCE_NOISE_SALT, label, draw_index).normal(
            0.0, sigma, img.shape
        )
    return np.clip(img, 0.0, 1.0)


def _target_pixels(spec: DatasetSpec, label: int, draw_index: int) -> np.ndarray:
    sh = spec.shift
    img = render_base(spec, label, draw_index, translation=sh.blob_translation)
    img = sh.intensity_scale * img + sh.intensity_offset
    if sh.noise_sigma_target > 0:
        img = img + _draw_rng(spec.seed, _TARGET_NOISE_SALT, label, draw_index).normal(
            0.0, sh.noise_sigma_target, img.shape
        )
    return np.clip(img, 0.0, 1.0)


def generate_dataset(
    spec: DatasetSpec,
) -> tuple[list[LabeledImage], list[LabeledImage], list[LabeledImage]]:
    """Generate (source_set, target_train, target_test), deterministic per seed.

    Target labels are hidden in target_train (label = UNKNOWN) and retained in
    target_test for evaluation only. Test draws use fresh indices so train and
    test images never coincide.
    """
    spec.validate()
    source_set = [
        LabeledImage(_source_pixels(spec, c, i), c, SOURCE, False)
        for c in spec.source_labels
        for i in range(spec.samples_per_class_source)
    ]
    n_t = spec.samples_per_class_target
    target_train = [
        LabeledImage(_target_pixels(spec, c, i), UNKNOWN, TARGET, False)
        for c in spec.target_labels
        for i in range(n_t)
    ]
    private = set(spec.target_private_labels)
    target_test = [
        LabeledImage(_target_pixels(spec, c, n_t + i), c, TARGET, c in private)
        for c in spec.target_labels
        for i in range(n_t)
    ]
    return source_set, target_train, target_test


def erase_square(pixels: np.ndarray, row: int, col: int, side: int) -> np.ndarray:
    """Zero a side x side square anchored at (row, col)."""
    out = pixels.copy()
    out[row : row + side, col : col + side] = 0.0
    return out


def intensity_jitter(pixels: np.ndarray, factor: float) -> np.ndarray:
    return np.clip(pixels * factor, 0.0, 1.0)


def augment_source(img: LabeledImage, rng: np.random.Generator) -> LabeledImage:
    """Source-only augmentation: random square erasing and intensity jitter.

    Each transform fires independently with probability 0.5. Target-domain
    inputs are rejected; augmentation must never touch target images.
    """
    if img.domain != SOURCE:
        raise ValueError("augment_source applies to source-domain images only")
    side = img.pixels.shape[0]
    out = img.pixels
    if rng.random() < 0.5:
        sq = int(rng.integers(4, 9))
        sq = min(sq, side)
        row = int(rng.integers(0, side - sq + 1))
        col = int(rng.integers(0, side - sq + 1))
        out = erase_square(out, row, col, sq)
    if rng.random() < 0.5:
        out = intensity_jitter(out, rng.uniform(0.8, 1.2))
    if out is img.pixels:
        out = out.copy()
    return LabeledImage(out, img.label, img.domain, img.is_unknown)


def crop(pixels: np.ndarray, row: int, col: int, side: int) -> np.ndarray:
    return pixels[row : row + side, col : col + side].copy()


def center_crop(pixels: np.ndarray, side: int) -> np.ndarray:
    anchor = (pixels.shape[0] - side) // 2
    return crop(pixels, anchor, anchor, side)


def five_crops(img: LabeledImage, crop_side: int) -> list[LabeledImage]:
    """Corner and center crops, in fixed order: TL, TR, BL, BR, center."""
    s = img.pixels.shape[0]
    c = crop_side
    if c > s:
        raise ValueError(f"crop_side {c} exceeds image side {s}")
    mid = (s - c) // 2
    anchors = [(0, 0), (0, s - c), (s - c, 0), (s - c, s - c), (mid, mid)]
    return [
        LabeledImage(crop(img.pixels, r, col, c), img.label, img.domain, img.is_unknown)
        for r, col in anchors
    ]


def _sample_source_crops(
    source_set: list[LabeledImage],
    batch_size: int,
    rng: np.random.Generator,
    crop_side: int,
    augment: bool,
) -> list[LabeledImage]:
    """Source half of a batch: sample with replacement, augment, random-crop."""
    if not source_set:
        raise ValueError("source set must be non-empty")
    out = []
    for idx in rng.integers(0, len(source_set), batch_size):
        item = source_set[int(idx)]
        if augment:
            item = augment_source(item, rng)
        margin = item.pixels.shape[0] - crop_side
        row = int(rng.integers(0, margin + 1))
        col = int(rng.integers(0, margin + 1))
        out.append(
            LabeledImage(crop(item.pixels, row, col, crop_side), item.label, item.domain, item.is_unknown)
        )
    return out


def make_batch(
    source_set: list[LabeledImage],
    target_train: list[LabeledImage],
    batch_size: int,
    rng: np.random.Generator,
    crop_side: int = 28,
    augment: bool = True,
) -> Batch:
    """Sample one step's batch: batch_size items per domain, with replacement.

    Source items are augmented (if enabled) and randomly cropped; target items
    only receive a deterministic center crop.
    """
    if not source_set or not target_train:
        raise ValueError("source and target sets must be non-empty")
    source_images = _sample_source_crops(source_set, batch_size, rng, crop_side, augment)
    target_images = []
    for idx in rng.integers(0, len(target_train), batch_size):
        item = target_train[int(idx)]
        target_images.append(
            LabeledImage(center_crop(item.pixels, crop_side), item.label, item.domain, item.is_unknown)
        )
    return Batch(source_images, target_images)


def dataset_spec_to_dict(spec: DatasetSpec) -> dict:
    return asdict(spec)


def dataset_spec_from_dict(d: dict) -> DatasetSpec:
    d = dict(d)
    shift_d = d.pop("shift", {})
    unknown_shift = set(shift_d) - {f for f in DomainShift.__dataclass_fields__}
    if unknown_shift:
        raise ValueError(f"unknown shift keys: {sorted(unknown_shift)}")
    unknown = set(d) - {f for f in DatasetSpec.__dataclass_fields__}
    if unknown:
        raise ValueError(f"unknown dataset keys: {sorted(unknown)}")
    return DatasetSpec(shift=DomainShift(**shift_d), **d)


def save_dataset(
    path: str | Path,
    spec: DatasetSpec,
    source_set: list[LabeledImage],
    target_train: list[LabeledImage],
    target_test: list[LabeledImage],
) -> Path:
    """Export a dataset directory: manifest.json, pixels.bin (f64 LE), labels.txt.

    Pixel rows are concatenated in split order (source, target_train,
    target_test), each image flattened row-major. Hidden and unknown labels
    are written as -1.
    """
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    splits = [source_set, target_train, target_test]
    manifest = {
        "schema_version": 1,
        "spec": dataset_spec_to_dict(spec),
        "seed": spec.seed,
        "counts": {
            "source": len(source_set),
            "target_train": len(target_train),
            "target_test": len(target_test),
        },
    }
    (path / MANIFEST_NAME).write_text(json.dumps(manifest, indent=2, sort_keys=True))
    rows = np.stack([img.pixels.reshape(-1) for split in splits for img in split])
    (path / PIXELS_NAME).write_bytes(rows.astype("<f8").tobytes())
    labels = [
        UNKNOWN if (img.label == UNKNOWN or img.is_unknown) else img.label
        for split in splits
        for img in split
    ]
    (path / LABELS_NAME).write_text("".join(f"{lab}\n" for lab in labels))
    return path


def load_dataset(
    path: str | Path,
) -> tuple[DatasetSpec, list[LabeledImage], list[LabeledImage], list[LabeledImage]]:
    """Load a dataset directory written by save_dataset."""
    path = Path(path)
    manifest = json.loads((path / MANIFEST_NAME).read_text())
    spec = dataset_spec_from_dict(manifest["spec"])
    counts = manifest["counts"]
    side = spec.image_side
    raw = np.frombuffer((path / PIXELS_NAME).read_bytes(), dtype="<f8")
    total = counts["source"] + counts["target_train"] + counts["target_test"]
    pixels = raw.reshape(total, side, side).astype(np.float64)
    labels = [int(line) for line in (path / LABELS_NAME).read_text().splitlines()]
    if len(labels) != total:
        raise ValueError("labels file length does not match manifest counts")

    def rows(offset: int, n: int, domain: str, test: bool) -> list[LabeledImage]:
        out = []
        for i in range(offset, offset + n):
            lab = labels[i]
            out.append(LabeledImage(pixels[i].copy(), lab, domain, test and lab == UNKNOWN))
        return out

    n_s, n_tr = counts["source"], counts["target_train"]
    source_set = rows(0, n_s, SOURCE, False)
    target_train = rows(n_s, n_tr, TARGET, False)
    target_test = rows(n_s + n_tr, counts["target_test"], TARGET, True)
    return spec, source_set, target_train, target_test
