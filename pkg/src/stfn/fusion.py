"""Element-wise fusion of the two streams and the wiring of fusion directions."""

from __future__ import annotations

from enum import Enum

import numpy as np

from .errors import ConfigError, ContextError, ShapeError


class _Named(str, Enum):
    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            choices = ", ".join(m.value for m in cls)
            raise ConfigError(f"unknown {cls.__name__} {value!r}; expected one of {choices}") from None

    def __str__(self):
        return self.value


class FusionOp(_Named):
    AVERAGE = "average"
    MULTIPLY = "multiply"
    MAXIMUM = "maximum"


class FusionDirection(_Named):
    A_TO_M = "a_to_m"
    M_TO_A = "m_to_a"
    BIDIRECTIONAL = "bidirectional"


class ArchVariant(_Named):
    TWO_STAGE = "two_stage"
    SINGLE_STAGE = "single_stage"
    CONCAT_FIRST = "concat_first"


def _check_pair(pa, pm):
    if pa.shape != pm.shape:
        raise ShapeError("fusion needs equal stream shapes", pa.shape, pm.shape)


def fuse(op, pa: np.ndarray, pm: np.ndarray) -> np.ndarray:
    op = FusionOp.parse(op)
    _check_pair(pa, pm)
    if op is FusionOp.AVERAGE:
        return (pa + pm) / 2.0
    if op is FusionOp.MULTIPLY:
        return pa * pm
    return np.maximum(pa, pm)


def fuse_backward(op, pa: np.ndarray, pm: np.ndarray,
                  grad_out: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of :func:`fuse` with respect to both streams.

    For ``maximum`` the whole gradient goes to the larger input; exact ties
    go to the appearance stream.
    """
    op = FusionOp.parse(op)
    _check_pair(pa, pm)
    _check_pair(pa, grad_out)
    if op is FusionOp.AVERAGE:
        half = grad_out / 2.0
        return half, half.copy()
    if op is FusionOp.MULTIPLY:
        return grad_out * pm, grad_out * pa
    to_a = pa >= pm
    return np.where(to_a, grad_out, 0.0), np.where(to_a, 0.0, grad_out)


def wire(direction, op, pa: np.ndarray, pm: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Inputs for the appearance and motion follow-up stages.

    The receiving stream gets the fused signal; the other passes through
    untouched. Bidirectional fusion feeds a separate copy to each stream.
    """
    direction = FusionDirection.parse(direction)
    fused = fuse(op, pa, pm)
    if direction is FusionDirection.BIDIRECTIONAL:
        return fused, fused.copy()
    if direction is FusionDirection.M_TO_A:
        return fused, pm
    return pa, fused


class Fusion:
    """Stateful wrapper around :func:`wire` that remembers inputs for backward."""

    def __init__(self, op, direction):
        self.op = FusionOp.parse(op)
        self.direction = FusionDirection.parse(direction)
        self._ctx = None

    def forward(self, pa, pm):
        out = wire(self.direction, self.op, pa, pm)
        self._ctx = (pa, pm)
        return out

    def backward(self, grad_a, grad_m):
        if self._ctx is None:
            raise ContextError("Fusion.backward without forward")
        pa, pm = self._ctx
        self._ctx = None
        d = self.direction
        if d is FusionDirection.BIDIRECTIONAL:
            return fuse_backward(self.op, pa, pm, grad_a + grad_m)
        if d is FusionDirection.M_TO_A:
            ga, gm = fuse_backward(self.op, pa, pm, grad_a)
            return ga, gm + grad_m
        ga, gm = fuse_backward(self.op, pa, pm, grad_m)
        return ga + grad_a, gm
