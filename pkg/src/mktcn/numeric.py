"""Dense float64 helpers and the seeded random generator used everywhere.

Arrays are plain ``numpy.ndarray`` objects of dtype float64. The random
generator is numpy's PCG64 bit generator, whose stream for a given seed is
fixed across platforms and numpy releases.
"""
from __future__ import annotations

from typing import Sequence

import numpy as np

from .errors import DimensionError, NumericError, ParameterError

DTYPE = np.float64


def make_rng(seed: int) -> np.random.Generator:
    """Return a PCG64-backed generator seeded with ``seed`` (64-bit unsigned)."""
    seed = int(seed)
    if seed < 0 or seed >= 2**64:
        raise ParameterError(f"seed must be a 64-bit unsigned integer, got {seed}")
    return np.random.Generator(np.random.PCG64(seed))


def as_tensor(values, shape: Sequence[int] | None = None) -> np.ndarray:
    arr = np.ascontiguousarray(values, dtype=DTYPE)
    if shape is not None:
        shape = tuple(int(s) for s in shape)
        if int(np.prod(shape)) != arr.size:
            raise DimensionError(f"cannot view {arr.size} values as shape {shape}")
        arr = arr.reshape(shape)
    return arr


def matmul(a, b) -> np.ndarray:
    a = np.asarray(a, dtype=DTYPE)
    b = np.asarray(b, dtype=DTYPE)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    return a @ b


def gaussian_fill(rng: np.random.Generator, shape, mean: float = 0.0, std: float = 1.0) -> np.ndarray:
    if std < 0:
        raise ParameterError(f"std must be non-negative, got {std}")
    shape = (shape,) if np.isscalar(shape) else tuple(shape)
    if std == 0:
        return np.full(shape, float(mean), dtype=DTYPE)
    return rng.normal(float(mean), float(std), size=shape).astype(DTYPE, copy=False)


def softmax(logits, axis: int = -1) -> np.ndarray:
    """Numerically stable softmax along ``axis`` (max-subtracted)."""
    z = np.asarray(logits, dtype=DTYPE)
    if np.isnan(z).any():
        raise NumericError("softmax received NaN logits")
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def argmax(p) -> int:
    """Index of the largest entry; ties go to the lowest index."""
    p = np.asarray(p, dtype=DTYPE).ravel()
    if p.size == 0:
        raise ParameterError("argmax of an empty vector")
    # np.argmax already returns the first occurrence of the maximum
    return int(np.argmax(p))
