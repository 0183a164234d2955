"""Residual Inception block over temporal feature sequences."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .errors import ConfigError, ContextError, ShapeError
from .layers import TRAIN, BatchNorm1d, Conv1d, Module, ReLU

DEFAULT_KERNELS = (2, 3, 4, 5)
SKIP_KERNEL = 2


class ConvBN(Module):
    """Conv1d followed by BatchNorm1d, optionally ReLU (the ``conv_b`` unit)."""

    def __init__(self, kernel_size, in_dim, out_dim, rng, relu=True):
        super().__init__()
        self.conv = self.add("conv", Conv1d(kernel_size, in_dim, out_dim, rng))
        self.bn = self.add("bn", BatchNorm1d(out_dim))
        self.relu = ReLU() if relu else None

    def forward(self, x, mode=TRAIN):
        y = self.bn.forward(self.conv.forward(x), mode)
        return self.relu.forward(y) if self.relu else y

    def backward(self, grad_out):
        if self.relu:
            grad_out = self.relu.backward(grad_out)
        return self.conv.backward(self.bn.backward(grad_out))


class ResIncBlock(Module):
    """``ReLU(concat(branch_k(x) for k in kernels) + skip(x))``.

    Each branch maps ``d -> d / len(kernels)`` through conv/BN/ReLU; the skip
    path is a kernel-2 conv ``d -> d`` with BN and no ReLU. Output shape
    equals input shape.
    """

    def __init__(self, dim: int, rng: np.random.Generator | None = None,
                 kernels: Sequence[int] = DEFAULT_KERNELS):
        super().__init__()
        kernels = tuple(int(k) for k in kernels)
        if not kernels:
            raise ConfigError("ResIncBlock needs at least one branch kernel")
        if dim < 1 or dim % len(kernels):
            raise ConfigError(
                f"block dim {dim} must be a positive multiple of {len(kernels)}")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.dim = dim
        self.kernels = kernels
        self.branch_dim = dim // len(kernels)
        self.branches = [
            self.add(f"branch{k}", ConvBN(k, dim, self.branch_dim, rng))
            for k in kernels
        ]
        self.skip = self.add("skip", ConvBN(SKIP_KERNEL, dim, dim, rng, relu=False))
        self.out_relu = ReLU()
        self._ready = False

    def forward(self, x: np.ndarray, mode: str = TRAIN) -> np.ndarray:
        if x.ndim != 3 or x.shape[2] != self.dim or x.shape[1] < 1:
            raise ShapeError(f"ResIncBlock expects (B, N>=1, {self.dim})", x.shape)
        inception = np.concatenate([b.forward(x, mode) for b in self.branches], axis=2)
        y = self.out_relu.forward(inception + self.skip.forward(x, mode))
        self._ready = True
        return y

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        if not self._ready:
            raise ContextError("ResIncBlock.backward without forward")
        self._ready = False
        g = self.out_relu.backward(grad_out)
        grad_x = self.skip.backward(g)
        w = self.branch_dim
        for i, branch in enumerate(self.branches):
            grad_x = grad_x + branch.backward(g[:, :, i * w:(i + 1) * w])
        return grad_x


class Stage(Module):
    """A sequence of Res-Inc blocks sharing one width."""

    def __init__(self, blocks: Sequence[ResIncBlock] = ()):
        super().__init__()
        dims = {b.dim for b in blocks}
        if len(dims) > 1:
            raise ConfigError(f"blocks in a stage must share dim, got {sorted(dims)}")
        self.blocks = [self.add(f"block{i}", b) for i, b in enumerate(blocks)]

    @classmethod
    def build(cls, dim: int, num_blocks: int, rng: np.random.Generator) -> "Stage":
        return cls([ResIncBlock(dim, rng) for _ in range(num_blocks)])

    def forward(self, x: np.ndarray, mode: str = TRAIN) -> np.ndarray:
        for block in self.blocks:
            x = block.forward(x, mode)
        return x

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        for block in reversed(self.blocks):
            grad_out = block.backward(grad_out)
        return grad_out


def stack_blocks(blocks: Sequence[ResIncBlock], x: np.ndarray, mode: str = TRAIN) -> np.ndarray:
    """Apply ``blocks`` in order; an empty list is the identity."""
    return Stage(blocks).forward(x, mode)
