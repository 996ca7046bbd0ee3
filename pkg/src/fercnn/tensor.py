"""Dense numeric arrays and a seeded, splittable random source.

Tensors are plain numpy ndarrays (row-major, float32 by default; float64 is
used by the verification suites). The functions here are the validated
primitives the rest of the package builds on: they check shapes up front and
never let NaN/Inf escape silently.
"""

from __future__ import annotations

import hashlib

import numpy as np

# The package-wide value carrier. Row-major, C-contiguous by construction.
Tensor = np.ndarray

FLOAT32 = np.float32
FLOAT64 = np.float64
DEFAULT_DTYPE = FLOAT32


class NonFiniteError(FloatingPointError):
    """A kernel produced NaN or Inf."""


def ensure_finite(arr: np.ndarray, context: str = "tensor op") -> np.ndarray:
    if not np.isfinite(arr).all():
        raise NonFiniteError(f"non-finite values produced by {context}")
    return arr


def _check_shape(shape) -> tuple[int, ...]:
    shape = tuple(int(d) for d in shape)
    if len(shape) == 0:
        raise ValueError("shape must have at least one dimension")
    for d in shape:
        if d < 1:
            raise ValueError(f"dimensions must be >= 1, got {shape}")
    return shape


def tensor_create(shape, fill: float = 0.0, values=None, dtype=DEFAULT_DTYPE) -> Tensor:
    """Create a tensor of `shape`, either filled with a constant or from
    explicit row-major `values` (whose length must match the shape)."""
    shape = _check_shape(shape)
    if values is not None:
        flat = np.asarray(values, dtype=dtype).reshape(-1)
        expected = int(np.prod(shape))
        if flat.size != expected:
            raise ValueError(
                f"got {flat.size} values for shape {shape} (expected {expected})"
            )
        out = flat.reshape(shape).copy()
    else:
        out = np.full(shape, fill, dtype=dtype)
    return ensure_finite(out, "tensor_create")


_BINARY_OPS = {
    "add": np.add,
    "sub": np.subtract,
    "mul": np.multiply,
}


def elementwise(op: str, a: Tensor, b=None) -> Tensor:
    """Elementwise arithmetic. `op` is one of add/sub/mul (tensor-tensor,
    equal shapes), scale (tensor-scalar) or map (unary callable in `b`).
    No implicit broadcasting beyond the scalar case."""
    a = np.asarray(a)
    if op in _BINARY_OPS:
        b = np.asarray(b)
        if a.shape != b.shape:
            raise ValueError(f"shape mismatch for {op}: {a.shape} vs {b.shape}")
        out = _BINARY_OPS[op](a, b)
    elif op == "scale":
        out = a * float(b)
    elif op == "map":
        if not callable(b):
            raise TypeError("map requires a callable")
        out = np.asarray(b(a), dtype=a.dtype)
        if out.shape != a.shape:
            raise ValueError("map must preserve shape")
    else:
        raise ValueError(f"unknown elementwise op {op!r}")
    return ensure_finite(out, f"elementwise {op}")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Standard rank-2 matrix product [m,k]x[k,n] -> [m,n]."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError(f"matmul requires rank-2 operands, got {a.ndim} and {b.ndim}")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"inner dimensions differ: {a.shape} x {b.shape}")
    return ensure_finite(a @ b, "matmul")


def reduce(op: str, t: Tensor, axis: int | None = None):
    """Reduce over `axis` (or all elements). argmax breaks ties toward the
    lowest index; full argmax flattens row-major first."""
    t = np.asarray(t)
    if axis is not None and not (-t.ndim <= axis < t.ndim):
        raise ValueError(f"axis {axis} out of range for rank {t.ndim}")
    if op == "sum":
        out = t.sum(axis=axis)
    elif op == "mean":
        out = t.mean(axis=axis)
    elif op == "max":
        out = t.max(axis=axis)
    elif op == "argmax":
        if t.size == 0:
            raise ValueError("argmax of empty tensor")
        # np.argmax already returns the first occurrence on ties
        return t.argmax(axis=axis)
    else:
        raise ValueError(f"unknown reduce op {op!r}")
    if np.isscalar(out) or out.ndim == 0:
        return float(out)
    return ensure_finite(out, f"reduce {op}")


def _key_to_int(part) -> int:
    if isinstance(part, (int, np.integer)):
        return int(part) & 0xFFFFFFFF
    if isinstance(part, str):
        digest = hashlib.blake2s(part.encode("utf-8"), digest_size=4).digest()
        return int.from_bytes(digest, "little")
    raise TypeError(f"stream key parts must be int or str, got {type(part)}")


class Rng:
    """Deterministic random source: PCG64 seeded through a SeedSequence over
    (seed, *stream key). Identical seeds give identical streams across runs;
    `stream()` derives independent child generators so per-sample draws never
    depend on iteration order or worker count."""

    def __init__(self, seed: int, _key: tuple = ()):
        self.seed = int(seed)
        self._key = tuple(_key)
        entropy = [self.seed & 0xFFFFFFFFFFFFFFFF] + [_key_to_int(k) for k in self._key]
        self._gen = np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))

    def stream(self, *key) -> "Rng":
        """Child generator for a named stream, e.g. rng.stream("augment", epoch, i)."""
        return Rng(self.seed, self._key + key)

    def normal(self, shape, mean: float = 0.0, std: float = 1.0, dtype=DEFAULT_DTYPE) -> Tensor:
        if std < 0:
            raise ValueError(f"std must be >= 0, got {std}")
        shape = _check_shape(shape)
        return self._gen.normal(mean, std, size=shape).astype(dtype)

    def uniform(self, low: float, high: float, shape=None) -> Tensor | float:
        if shape is None:
            return float(self._gen.uniform(low, high))
        return self._gen.uniform(low, high, size=_check_shape(shape))

    def random(self, shape) -> Tensor:
        return self._gen.random(size=_check_shape(shape))

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def integers(self, low: int, high: int, shape=None):
        return self._gen.integers(low, high, size=shape)


def sample_normal(rng: Rng, shape, mean: float = 0.0, std: float = 1.0, dtype=DEFAULT_DTYPE) -> Tensor:
    """Seed-deterministic draws from Normal(mean, std^2)."""
    return rng.normal(shape, mean, std, dtype=dtype)
