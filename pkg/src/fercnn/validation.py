"""Input validation helpers for the estimator and serving paths."""

from __future__ import annotations

import numpy as np

from .data import IMAGE_SIDE, NUM_CLASSES, PIXELS_PER_IMAGE
from .tensor import DEFAULT_DTYPE


def as_image_batch(X) -> np.ndarray:
    """Coerces to [n, 1, 48, 48] float32 in [0, 1].

    Accepts [n, 2304], [n, 48, 48] or [n, 1, 48, 48]; integer inputs are
    treated as 0..255 grayscale and scaled, floats must already be in [0, 1].
    """
    X = np.asarray(X)
    if X.ndim == 2 and X.shape[1] == PIXELS_PER_IMAGE:
        X = X.reshape(len(X), 1, IMAGE_SIDE, IMAGE_SIDE)
    elif X.ndim == 3 and X.shape[1:] == (IMAGE_SIDE, IMAGE_SIDE):
        X = X[:, None]
    elif X.ndim == 4 and X.shape[1:] == (1, IMAGE_SIDE, IMAGE_SIDE):
        pass
    else:
        raise ValueError(
            f"expected images shaped [n,{PIXELS_PER_IMAGE}], [n,{IMAGE_SIDE},{IMAGE_SIDE}] "
            f"or [n,1,{IMAGE_SIDE},{IMAGE_SIDE}], got {X.shape}")
    if len(X) == 0:
        raise ValueError("empty image batch")
    if np.issubdtype(X.dtype, np.integer):
        if X.min() < 0 or X.max() > 255:
            raise ValueError("integer pixels must be in 0..255")
        return (X.astype(DEFAULT_DTYPE) / 255.0)
    X = X.astype(DEFAULT_DTYPE, copy=False)
    if not np.isfinite(X).all():
        raise ValueError("pixels must be finite")
    if X.min() < 0.0 or X.max() > 1.0:
        raise ValueError("float pixels must be in [0, 1]")
    return np.ascontiguousarray(X)


def as_label_array(y, n: int | None = None) -> np.ndarray:
    y = np.asarray(y)
    if y.ndim != 1:
        raise ValueError(f"labels must be a flat vector, got shape {y.shape}")
    if not np.issubdtype(y.dtype, np.integer):
        if not np.all(np.equal(np.mod(y, 1), 0)):
            raise ValueError("labels must be integers")
        y = y.astype(np.int64)
    y = y.astype(np.int64, copy=False)
    if len(y) and (y.min() < 0 or y.max() >= NUM_CLASSES):
        raise ValueError(f"labels must be in 0..{NUM_CLASSES - 1}")
    if n is not None and len(y) != n:
        raise ValueError(f"got {len(y)} labels for {n} images")
    return y


def decode_pixel_list(values) -> np.ndarray:
    """2304 integers in 0..255 -> [1, 1, 48, 48] float32 in [0, 1]."""
    arr = np.asarray(values)
    if arr.ndim != 1 or arr.size != PIXELS_PER_IMAGE:
        raise ValueError(f"expected {PIXELS_PER_IMAGE} pixels, got {arr.size}")
    if not np.issubdtype(arr.dtype, np.integer):
        if not np.all(np.equal(np.mod(arr, 1), 0)):
            raise ValueError("pixels must be integers")
        arr = arr.astype(np.int64)
    if arr.min() < 0 or arr.max() > 255:
        raise ValueError("pixels must be in 0..255")
    return (arr.astype(DEFAULT_DTYPE) / 255.0).reshape(1, 1, IMAGE_SIDE, IMAGE_SIDE)
