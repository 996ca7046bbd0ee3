"""Shared test utilities: finite-difference gradients, guarded relative
error, and a deterministic synthetic dataset in the FER2013 CSV format."""

from __future__ import annotations

import numpy as np

from fercnn.data import IMAGE_SIDE, NUM_CLASSES, USAGES
from fercnn.tensor import Rng

FD_STEP = 1e-5
REL_TOL = 1e-6
# guards: the relative floor keeps near-zero entries from amplifying FD
# rounding noise into huge ratios; the absolute floor passes coordinates
# whose true gradient is structurally zero (e.g. a conv bias followed by
# batch norm), where FD reads only its own ~1e-9 rounding noise
REL_FLOOR = 1e-3
ABS_NOISE_FLOOR = 1e-7


def numeric_grad(f, x: np.ndarray, h: float = FD_STEP) -> np.ndarray:
    """Central finite differences of scalar f around x (float64, in place)."""
    assert x.dtype == np.float64
    grad = np.zeros_like(x)
    flat, gflat = x.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f()
        flat[i] = orig - h
        fm = f()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad


def max_rel_err(analytic: np.ndarray, numeric: np.ndarray) -> float:
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    diff = np.abs(analytic - numeric)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), REL_FLOOR)
    rel = diff / denom
    rel[diff <= ABS_NOISE_FLOOR] = 0.0
    return float(np.max(rel))


# class signatures for synthetic faces: distinct (frequency, orientation)
# gratings, far enough apart to survive +-15 degree rotation and 10% zoom
_SIGNATURES = [(2.0, 0.0), (2.0, 45.0), (2.0, 90.0), (2.0, 135.0),
               (5.0, 0.0), (5.0, 60.0), (5.0, 120.0)]


def pattern_image(label: int, rng: Rng) -> np.ndarray:
    freq, orient_deg = _SIGNATURES[label]
    theta = np.radians(orient_deg)
    rr, cc = np.meshgrid(np.arange(IMAGE_SIDE), np.arange(IMAGE_SIDE), indexing="ij")
    phase = rng.uniform(0.0, 2.0 * np.pi)
    wave = np.cos(2.0 * np.pi * freq * (rr * np.cos(theta) + cc * np.sin(theta)) / IMAGE_SIDE + phase)
    img = 0.5 + 0.35 * wave + rng.normal((IMAGE_SIDE, IMAGE_SIDE), 0.0, 0.08, dtype=np.float64)
    return np.clip(img, 0.0, 1.0)[None].astype(np.float32)


def synthetic_rows(counts_per_usage: dict[str, list[int]], seed: int = 0):
    """Yields (label, pixel ints, usage) rows, grouped by usage in the
    canonical order, deterministic under seed."""
    for usage in USAGES:
        counts = counts_per_usage.get(usage, [0] * NUM_CLASSES)
        for label, count in enumerate(counts):
            for i in range(count):
                rng = Rng(seed).stream("synth", usage, label, i)
                img = pattern_image(label, rng)
                ints = np.rint(img.reshape(-1) * 255.0).astype(np.int64)
                yield label, ints, usage


def write_synthetic_csv(path, counts_per_usage: dict[str, list[int]], seed: int = 0) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("emotion,pixels,Usage\n")
        for label, ints, usage in synthetic_rows(counts_per_usage, seed):
            fh.write(f"{label},{' '.join(str(v) for v in ints)},{usage}\n")


def balanced_counts(per_class: int) -> list[int]:
    return [per_class] * NUM_CLASSES
