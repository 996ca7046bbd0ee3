"""FER2013 CSV ingestion, split discipline, class statistics and batching.

File format: UTF-8 with header `emotion,pixels,Usage`; emotion in 0..6,
pixels = 2304 space-separated ints in 0..255 (row-major, top-left origin),
Usage in {Training, PublicTest, PrivateTest}. Pixels are scaled to [0,1].
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .optim import ClassWeights
from .tensor import DEFAULT_DTYPE, Rng

EMOTIONS = ("angry", "disgust", "fear", "happy", "sad", "surprise", "neutral")
NUM_CLASSES = len(EMOTIONS)
IMAGE_SIDE = 48
PIXELS_PER_IMAGE = IMAGE_SIDE * IMAGE_SIDE
USAGES = ("Training", "PublicTest", "PrivateTest")
HEADER = "emotion,pixels,Usage"


class FerFormatError(ValueError):
    """A malformed dataset row; the message names the 1-based line number."""


@dataclass
class Sample:
    """One 48x48 grayscale face in [0,1] with its label index."""

    pixels: np.ndarray  # [1, 48, 48] float32
    label: int

    def __post_init__(self):
        if self.pixels.shape != (1, IMAGE_SIDE, IMAGE_SIDE):
            raise ValueError(f"pixels must be [1,{IMAGE_SIDE},{IMAGE_SIDE}], got {self.pixels.shape}")
        if not 0 <= self.label < NUM_CLASSES:
            raise ValueError(f"label must be in 0..{NUM_CLASSES - 1}, got {self.label}")


@dataclass
class DatasetSplit:
    samples: list[Sample]
    usage: str

    def __len__(self):
        return len(self.samples)

    def class_counts(self) -> np.ndarray:
        counts = np.zeros(NUM_CLASSES, dtype=np.int64)
        for s in self.samples:
            counts[s.label] += 1
        return counts

    def as_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        """Stacked (pixels [n,1,48,48] float32, labels [n] int64)."""
        if not self.samples:
            raise ValueError("empty split")
        x = np.stack([s.pixels for s in self.samples])
        y = np.array([s.label for s in self.samples], dtype=np.int64)
        return x, y


@dataclass
class FerData:
    training: DatasetSplit
    public_test: DatasetSplit
    private_test: DatasetSplit

    _BY_NAME = {
        "training": "training",
        "public-test": "public_test",
        "private-test": "private_test",
    }

    def split(self, name: str) -> DatasetSplit:
        if name not in self._BY_NAME:
            raise ValueError(f"unknown split {name!r}; choose from {sorted(self._BY_NAME)}")
        return getattr(self, self._BY_NAME[name])

    def total(self) -> int:
        return len(self.training) + len(self.public_test) + len(self.private_test)


def _parse_pixels(text: str, line_no: int) -> np.ndarray:
    vals = np.fromstring(text, dtype=np.int64, sep=" ")
    if vals.size != PIXELS_PER_IMAGE:
        raise FerFormatError(f"line {line_no}: expected {PIXELS_PER_IMAGE} pixels, got {vals.size}")
    if vals.min() < 0 or vals.max() > 255:
        raise FerFormatError(f"line {line_no}: pixel values must be in 0..255")
    return vals


def parse_row(line: str, line_no: int) -> tuple[Sample, str]:
    parts = line.rstrip("\n").split(",")
    if len(parts) != 3:
        raise FerFormatError(f"line {line_no}: expected 3 columns, got {len(parts)}")
    emotion_text, pixel_text, usage = parts
    try:
        label = int(emotion_text)
    except ValueError:
        raise FerFormatError(f"line {line_no}: emotion {emotion_text!r} is not an integer") from None
    if not 0 <= label < NUM_CLASSES:
        raise FerFormatError(f"line {line_no}: emotion {label} outside 0..{NUM_CLASSES - 1}")
    usage = usage.strip()
    if usage not in USAGES:
        raise FerFormatError(f"line {line_no}: unknown Usage {usage!r}")
    ints = _parse_pixels(pixel_text, line_no)
    pixels = (ints.astype(DEFAULT_DTYPE) / 255.0).reshape(1, IMAGE_SIDE, IMAGE_SIDE)
    return Sample(pixels=pixels, label=label), usage


def serialize_row(sample: Sample, usage: str) -> str:
    """Inverse of parse_row; the /255 scaling round-trips exactly."""
    ints = np.rint(sample.pixels.reshape(-1) * 255.0).astype(np.int64)
    return f"{sample.label},{' '.join(str(v) for v in ints)},{usage}"


def load_fer2013(path) -> FerData:
    """Parse the CSV into the three usage splits, preserving file order."""
    buckets: dict[str, list[Sample]] = {u: [] for u in USAGES}
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().rstrip("\r\n")
        if header != HEADER:
            raise FerFormatError(f"line 1: expected header {HEADER!r}, got {header!r}")
        for line_no, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            sample, usage = parse_row(line, line_no)
            buckets[usage].append(sample)
    return FerData(
        training=DatasetSplit(buckets["Training"], "Training"),
        public_test=DatasetSplit(buckets["PublicTest"], "PublicTest"),
        private_test=DatasetSplit(buckets["PrivateTest"], "PrivateTest"),
    )


def compute_class_weights(counts) -> ClassWeights:
    """w_c = N_total / (K * n_c): inverse-frequency weights whose
    count-weighted mean is exactly 1."""
    counts = np.asarray(counts, dtype=np.int64)
    if counts.shape != (NUM_CLASSES,):
        raise ValueError(f"expected {NUM_CLASSES} counts, got {counts.shape}")
    if (counts <= 0).any():
        raise ValueError("every class count must be > 0 to compute weights")
    total = counts.sum()
    return ClassWeights(total / (NUM_CLASSES * counts.astype(np.float64)))


def stratified_subset(split: DatasetSplit, fraction: float, seed: int) -> DatasetSplit:
    """Per-class sample of ceil(fraction * n_c) items, deterministic under
    seed; selected samples keep their original relative order."""
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"fraction must be in (0,1], got {fraction}")
    if not split.samples:
        raise ValueError("empty split")
    if fraction == 1.0:
        return DatasetSplit(list(split.samples), split.usage)
    by_class: dict[int, list[int]] = {}
    for idx, s in enumerate(split.samples):
        by_class.setdefault(s.label, []).append(idx)
    chosen: list[int] = []
    for label in sorted(by_class):
        idxs = by_class[label]
        take = int(np.ceil(fraction * len(idxs)))
        rng = Rng(seed).stream("subset", label)
        picked = rng.permutation(len(idxs))[:take]
        chosen.extend(idxs[i] for i in picked)
    chosen.sort()
    return DatasetSplit([split.samples[i] for i in chosen], split.usage)


def batch_indices(n: int, batch_size: int, seed: int | None = None, shuffle: bool = False):
    """Index batches covering 0..n-1 exactly once; the final batch may be
    short. Shuffle order is the seeded permutation for (seed)."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    if n < 1:
        raise ValueError("empty split")
    order = Rng(seed).stream("shuffle").permutation(n) if shuffle else np.arange(n)
    for start in range(0, n, batch_size):
        yield order[start : start + batch_size]


def batch_iter(split: DatasetSplit, batch_size: int, seed: int | None = None, shuffle: bool = False):
    """Yields (pixels [b,1,48,48], labels list) batches over one epoch."""
    x, y = split.as_arrays()
    for idx in batch_indices(len(split), batch_size, seed=seed, shuffle=shuffle):
        yield x[idx], [int(v) for v in y[idx]]
