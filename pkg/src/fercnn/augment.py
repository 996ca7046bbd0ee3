"""Stochastic training-time augmentation: horizontal flip, one affine warp
(rotation, shear, zoom, shift composed into a single matrix) with bilinear
sampling and edge replication, then a brightness scale.

Only the Training split is ever augmented. Every draw is deterministic under
(seed, sample-id) through Rng streams, so results do not depend on iteration
order or worker count.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .tensor import Rng


@dataclass
class AugmentPolicy:
    """Symmetric ranges for each transform; rotation/shear in degrees, shift
    as a fraction of image width/height, zoom/brightness as (lo, hi) factors."""

    flip_prob: float = 0.5
    rotation_deg: float = 15.0
    shear_deg: float = 10.0
    zoom: tuple[float, float] = (0.9, 1.1)
    shift_frac: float = 0.1
    brightness: tuple[float, float] = (0.8, 1.2)

    def __post_init__(self):
        if not 0.0 <= self.flip_prob <= 1.0:
            raise ValueError("flip_prob must be in [0,1]")
        if self.rotation_deg < 0 or self.shear_deg < 0 or self.shift_frac < 0:
            raise ValueError("range half-widths must be >= 0")
        for name in ("zoom", "brightness"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"{name} range must be ordered, got ({lo}, {hi})")
            if name == "zoom" and lo <= 0:
                raise ValueError("zoom must stay positive")

    @classmethod
    def identity(cls) -> "AugmentPolicy":
        return cls(flip_prob=0.0, rotation_deg=0.0, shear_deg=0.0,
                   zoom=(1.0, 1.0), shift_frac=0.0, brightness=(1.0, 1.0))


class AffineParams:
    """A 2x3 matrix mapping output pixel coordinates to source coordinates
    (row, col), composed about the image center. Must be invertible."""

    def __init__(self, matrix: np.ndarray):
        matrix = np.asarray(matrix, dtype=np.float64)
        if matrix.shape != (2, 3):
            raise ValueError(f"affine matrix must be 2x3, got {matrix.shape}")
        det = matrix[0, 0] * matrix[1, 1] - matrix[0, 1] * matrix[1, 0]
        if abs(det) < 1e-12:
            raise ValueError("singular affine matrix")
        self.matrix = matrix

    @classmethod
    def identity(cls) -> "AffineParams":
        return cls(np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]))

    @classmethod
    def compose(cls, rotation_deg: float, shear_deg: float, zoom: float,
                shift_rows: float, shift_cols: float, side: int = 48) -> "AffineParams":
        """Builds the output->source map for "rotate, shear, zoom about the
        center, then shift": source = F^-1 (out - center - shift) + center
        where F = R(theta) @ Sh(phi) @ Z(zoom) acts on (row, col) offsets."""
        th = math.radians(rotation_deg)
        ph = math.radians(shear_deg)
        rot = np.array([[math.cos(th), -math.sin(th)], [math.sin(th), math.cos(th)]])
        shear = np.array([[1.0, math.tan(ph)], [0.0, 1.0]])
        fwd = (rot @ shear) * zoom
        det = fwd[0, 0] * fwd[1, 1] - fwd[0, 1] * fwd[1, 0]
        if abs(det) < 1e-12:
            raise ValueError("degenerate transform")
        inv = np.array([[fwd[1, 1], -fwd[0, 1]], [-fwd[1, 0], fwd[0, 0]]]) / det
        center = (side - 1) / 2.0
        offset = np.array([center + shift_rows, center + shift_cols])
        translation = np.array([center, center]) - inv @ offset
        return cls(np.column_stack([inv, translation]))


def sample_params(policy: AugmentPolicy, rng: Rng) -> tuple[bool, AffineParams, float]:
    """Uniform draws from each policy range, in a fixed documented order:
    flip, rotation, shear, zoom, shift-rows, shift-cols, brightness."""
    flip = bool(rng.uniform(0.0, 1.0) < policy.flip_prob)
    rotation = rng.uniform(-policy.rotation_deg, policy.rotation_deg)
    shear = rng.uniform(-policy.shear_deg, policy.shear_deg)
    zoom = rng.uniform(policy.zoom[0], policy.zoom[1])
    side = 48
    shift_rows = rng.uniform(-policy.shift_frac, policy.shift_frac) * side
    shift_cols = rng.uniform(-policy.shift_frac, policy.shift_frac) * side
    brightness_factor = rng.uniform(policy.brightness[0], policy.brightness[1])
    params = AffineParams.compose(rotation, shear, zoom, shift_rows, shift_cols, side=side)
    return flip, params, brightness_factor


def apply_affine(image: np.ndarray, params: AffineParams) -> np.ndarray:
    """Bilinear resampling of the source at the mapped coordinates;
    out-of-bounds coordinates clamp to the nearest edge pixel."""
    _, h, w = image.shape
    src = image[0]
    rows, cols = np.meshgrid(np.arange(h, dtype=np.float64),
                             np.arange(w, dtype=np.float64), indexing="ij")
    m = params.matrix
    src_r = m[0, 0] * rows + m[0, 1] * cols + m[0, 2]
    src_c = m[1, 0] * rows + m[1, 1] * cols + m[1, 2]
    src_r = np.clip(src_r, 0.0, h - 1)
    src_c = np.clip(src_c, 0.0, w - 1)

    r0 = np.floor(src_r).astype(np.int64)
    c0 = np.floor(src_c).astype(np.int64)
    r1 = np.minimum(r0 + 1, h - 1)
    c1 = np.minimum(c0 + 1, w - 1)
    fr = (src_r - r0).astype(image.dtype)
    fc = (src_c - c0).astype(image.dtype)

    top = src[r0, c0] * (1 - fc) + src[r0, c1] * fc
    bottom = src[r1, c0] * (1 - fc) + src[r1, c1] * fc
    out = top * (1 - fr) + bottom * fr
    return np.clip(out, 0.0, 1.0)[None].astype(image.dtype, copy=False)


def horizontal_flip(image: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(image[..., ::-1])


def brightness(image: np.ndarray, factor: float) -> np.ndarray:
    if factor <= 0:
        raise ValueError(f"brightness factor must be > 0, got {factor}")
    return np.clip(image * image.dtype.type(factor), 0.0, 1.0)


def augment(image: np.ndarray, policy: AugmentPolicy, rng: Rng) -> np.ndarray:
    """flip -> affine -> brightness. Values stay in [0,1]; the identity
    policy reproduces the input bit-exactly."""
    flip, params, factor = sample_params(policy, rng)
    out = horizontal_flip(image) if flip else image
    out = apply_affine(out, params)
    return brightness(out, factor)
