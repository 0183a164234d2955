"""Dense float64 tensors.

A tensor here is a C-contiguous ``numpy.ndarray`` of ``float64``. The helpers
below add the shape checking the rest of the package relies on and raise
:class:`~stfn.errors.ShapeError` instead of letting numpy broadcast silently.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .errors import ShapeError

DTYPE = np.float64

_ELEMENTWISE = {
    "add": np.add,
    "sub": np.subtract,
    "mul": np.multiply,
    "max": np.maximum,
}


def _check_shape(shape: Sequence[int]) -> tuple[int, ...]:
    shape = tuple(int(s) for s in shape)
    if any(s < 0 for s in shape):
        raise ShapeError("negative extent", shape)
    return shape


def as_tensor(x) -> np.ndarray:
    return np.ascontiguousarray(x, dtype=DTYPE)


def zeros(shape: Sequence[int]) -> np.ndarray:
    return np.zeros(_check_shape(shape), dtype=DTYPE)


def full(shape: Sequence[int], value: float) -> np.ndarray:
    return np.full(_check_shape(shape), value, dtype=DTYPE)


def random_normal(shape: Sequence[int], mean: float = 0.0, std: float = 1.0,
                  seed: int | np.random.Generator | None = None) -> np.ndarray:
    if std < 0:
        raise ValueError(f"std must be non-negative, got {std}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return rng.normal(mean, std, size=_check_shape(shape)).astype(DTYPE, copy=False)


def elementwise(a: np.ndarray, b: np.ndarray, op: str) -> np.ndarray:
    try:
        fn = _ELEMENTWISE[op]
    except KeyError:
        raise ValueError(f"unknown elementwise op {op!r}") from None
    if a.shape != b.shape:
        raise ShapeError(f"elementwise {op} needs equal shapes", a.shape, b.shape)
    return fn(a, b)


def scale(a: np.ndarray, s: float) -> np.ndarray:
    return a * float(s)


def reduce_mean(a: np.ndarray, axis: int) -> np.ndarray:
    if not -a.ndim <= axis < a.ndim:
        raise ShapeError(f"axis {axis} out of range", a.shape)
    return a.mean(axis=axis)


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError("matmul needs (m,k) x (k,n)", a.shape, b.shape)
    return a @ b


def concat(tensors: Sequence[np.ndarray], axis: int) -> np.ndarray:
    if not tensors:
        raise ShapeError("concat of nothing")
    ref = tensors[0]
    ax = axis % ref.ndim
    for t in tensors[1:]:
        if t.ndim != ref.ndim or any(
                t.shape[i] != ref.shape[i] for i in range(ref.ndim) if i != ax):
            raise ShapeError(f"concat along axis {axis}", ref.shape, t.shape)
    return np.concatenate(tensors, axis=ax)


def slice_axis(a: np.ndarray, axis: int, start: int, length: int) -> np.ndarray:
    ax = axis % a.ndim
    if start < 0 or length < 0 or start + length > a.shape[ax]:
        raise ShapeError(f"slice [{start}, {start + length}) on axis {axis}", a.shape)
    index = [slice(None)] * a.ndim
    index[ax] = slice(start, start + length)
    return a[tuple(index)].copy()
