"""Differentiable primitive layers with hand-written backward passes.

Every layer caches what its backward pass needs during ``forward`` and
consumes that cache in ``backward``. Parameter gradients land in
``layer.grads`` (same keys as ``layer.params``); ``backward`` returns the
gradient with respect to the layer input.
"""

from __future__ import annotations

from typing import Iterator

import numpy as np

from .errors import ConfigError, ContextError, ShapeError
from .tensor import DTYPE

TRAIN = "train"
EVAL = "eval"


def _check_mode(mode: str) -> None:
    if mode not in (TRAIN, EVAL):
        raise ConfigError(f"mode must be 'train' or 'eval', got {mode!r}")


class Module:
    """Minimal container: own parameters, buffers, and ordered child modules."""

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.buffers: dict[str, np.ndarray] = {}
        self._children: dict[str, Module] = {}

    def add(self, name: str, module: "Module") -> "Module":
        self._children[name] = module
        return module

    def children(self) -> Iterator[tuple[str, "Module"]]:
        return iter(self._children.items())

    def _walk(self, prefix: str = "") -> Iterator[tuple[str, "Module"]]:
        yield prefix, self
        for name, child in self._children.items():
            yield from child._walk(f"{prefix}{name}.")

    def named_parameters(self) -> Iterator[tuple[str, np.ndarray]]:
        for prefix, mod in self._walk():
            for k, v in mod.params.items():
                yield prefix + k, v

    def named_grads(self) -> Iterator[tuple[str, np.ndarray]]:
        for prefix, mod in self._walk():
            for k, v in mod.params.items():
                yield prefix + k, mod.grads.get(k, np.zeros_like(v))

    def named_buffers(self) -> Iterator[tuple[str, np.ndarray]]:
        for prefix, mod in self._walk():
            for k, v in mod.buffers.items():
                yield prefix + k, v

    def zero_grad(self) -> None:
        for _, mod in self._walk():
            mod.grads = {k: np.zeros_like(v) for k, v in mod.params.items()}

    def state_dict(self) -> dict[str, np.ndarray]:
        """Parameters then buffers, in deterministic traversal order."""
        state = {}
        for prefix, mod in self._walk():
            for k, v in mod.params.items():
                state[prefix + k] = v
        for prefix, mod in self._walk():
            for k, v in mod.buffers.items():
                state[prefix + k] = v
        return state

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = self.state_dict()
        missing = own.keys() - state.keys()
        extra = state.keys() - own.keys()
        if missing or extra:
            raise ConfigError(
                f"state mismatch: missing={sorted(missing)} unexpected={sorted(extra)}")
        for name, dst in own.items():
            src = np.asarray(state[name], dtype=DTYPE)
            if src.shape != dst.shape:
                raise ShapeError(f"state entry {name}", dst.shape, src.shape)
            dst[...] = src


def _he_normal(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)


class Conv1d(Module):
    """Same-length temporal convolution over ``(B, N, d_in)`` sequences.

    Input is zero-padded with ``k - 1`` steps on the left only, so output
    step ``t`` sees input steps ``t-k+1 .. t`` for every kernel size.
    """

    def __init__(self, kernel_size: int, in_dim: int, out_dim: int,
                 rng: np.random.Generator | None = None):
        super().__init__()
        if kernel_size < 1 or in_dim < 1 or out_dim < 1:
            raise ConfigError(
                f"bad Conv1d sizes k={kernel_size} d_in={in_dim} d_out={out_dim}")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.kernel_size = kernel_size
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.params["weight"] = _he_normal(
            rng, (kernel_size, in_dim, out_dim), kernel_size * in_dim)
        self.params["bias"] = np.zeros(out_dim, dtype=DTYPE)
        self._ctx = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        if x.ndim != 3 or x.shape[2] != self.in_dim:
            raise ShapeError(f"Conv1d expects (B, N, {self.in_dim})", x.shape)
        k = self.kernel_size
        w = self.params["weight"]
        B, N, _ = x.shape
        xp = np.concatenate([np.zeros((B, k - 1, self.in_dim)), x], axis=1)
        out = np.broadcast_to(self.params["bias"], (B, N, self.out_dim)).copy()
        for j in range(k):
            out += xp[:, j:j + N, :] @ w[j]
        self._ctx = xp
        return out

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        xp = self._ctx
        if xp is None:
            raise ContextError("Conv1d.backward without forward")
        self._ctx = None
        k = self.kernel_size
        w = self.params["weight"]
        B, N, _ = grad_out.shape
        gw = np.empty_like(w)
        gxp = np.zeros_like(xp)
        g2 = grad_out.reshape(B * N, self.out_dim)
        for j in range(k):
            window = xp[:, j:j + N, :].reshape(B * N, self.in_dim)
            gw[j] = window.T @ g2
            gxp[:, j:j + N, :] += grad_out @ w[j].T
        self.grads = {"weight": gw, "bias": g2.sum(axis=0)}
        return gxp[:, k - 1:, :]


class BatchNorm1d(Module):
    """Per-channel normalization over the joint batch x time axis."""

    def __init__(self, dim: int, momentum: float = 0.1, eps: float = 1e-5):
        super().__init__()
        if not 0.0 < momentum <= 1.0:
            raise ConfigError(f"momentum must be in (0, 1], got {momentum}")
        if eps <= 0:
            raise ConfigError(f"eps must be positive, got {eps}")
        self.dim = dim
        self.momentum = momentum
        self.eps = eps
        self.params["gamma"] = np.ones(dim, dtype=DTYPE)
        self.params["beta"] = np.zeros(dim, dtype=DTYPE)
        self.buffers["running_mean"] = np.zeros(dim, dtype=DTYPE)
        self.buffers["running_var"] = np.ones(dim, dtype=DTYPE)
        self._ctx = None

    def forward(self, x: np.ndarray, mode: str = TRAIN) -> np.ndarray:
        _check_mode(mode)
        if x.ndim != 3 or x.shape[2] != self.dim:
            raise ShapeError(f"BatchNorm1d expects (B, N, {self.dim})", x.shape)
        gamma, beta = self.params["gamma"], self.params["beta"]
        if mode == TRAIN:
            count = x.shape[0] * x.shape[1]
            if count < 2:
                raise ShapeError("BatchNorm1d in train mode needs B*N >= 2", x.shape)
            mean = x.mean(axis=(0, 1))
            var = x.var(axis=(0, 1))
            m = self.momentum
            rm, rv = self.buffers["running_mean"], self.buffers["running_var"]
            rm *= 1 - m
            rm += m * mean
            rv *= 1 - m
            rv += m * var * count / (count - 1)
        else:
            mean = self.buffers["running_mean"]
            var = self.buffers["running_var"]
        inv_std = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mean) * inv_std
        self._ctx = (mode, xhat, inv_std)
        return gamma * xhat + beta

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        if self._ctx is None:
            raise ContextError("BatchNorm1d.backward without forward")
        mode, xhat, inv_std = self._ctx
        self._ctx = None
        gamma = self.params["gamma"]
        self.grads = {
            "gamma": (grad_out * xhat).sum(axis=(0, 1)),
            "beta": grad_out.sum(axis=(0, 1)),
        }
        gxhat = grad_out * gamma
        if mode == EVAL:
            return gxhat * inv_std
        # mean and variance both depend on x in train mode
        return inv_std * (gxhat - gxhat.mean(axis=(0, 1))
                          - xhat * (gxhat * xhat).mean(axis=(0, 1)))


class ReLU(Module):
    def __init__(self):
        super().__init__()
        self._ctx = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        mask = x > 0
        self._ctx = mask
        return np.where(mask, x, 0.0)

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        if self._ctx is None:
            raise ContextError("ReLU.backward without forward")
        mask, self._ctx = self._ctx, None
        return np.where(mask, grad_out, 0.0)


class Affine(Module):
    """``x @ W + b`` for ``(B, d_in)`` inputs."""

    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator | None = None):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.params["weight"] = _he_normal(rng, (in_dim, out_dim), in_dim)
        self.params["bias"] = np.zeros(out_dim, dtype=DTYPE)
        self._ctx = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise ShapeError(f"Affine expects (B, {self.in_dim})", x.shape)
        self._ctx = x
        return x @ self.params["weight"] + self.params["bias"]

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        x = self._ctx
        if x is None:
            raise ContextError("Affine.backward without forward")
        self._ctx = None
        self.grads = {"weight": x.T @ grad_out, "bias": grad_out.sum(axis=0)}
        return grad_out @ self.params["weight"].T


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_backward(probs: np.ndarray, grad_probs: np.ndarray) -> np.ndarray:
    """Vector-Jacobian product of softmax, row-wise."""
    return probs * (grad_probs - (grad_probs * probs).sum(axis=-1, keepdims=True))


def check_labels(labels, num_classes: int) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.ndim != 1 or not np.issubdtype(labels.dtype, np.integer):
        raise ShapeError("labels must be a 1-D integer array", labels.shape)
    bad = (labels < 0) | (labels >= num_classes)
    if bad.any():
        raise ConfigError(
            f"label {int(labels[bad][0])} out of range [0, {num_classes})")
    return labels


def softmax_cross_entropy(logits: np.ndarray, labels) -> tuple[float, np.ndarray, np.ndarray]:
    """Mean negative log-likelihood.

    Returns ``(loss, probs, grad_logits)`` where ``grad_logits`` is the
    gradient of the mean loss, i.e. ``(probs - onehot) / B``.
    """
    if logits.ndim != 2:
        raise ShapeError("logits must be (B, C)", logits.shape)
    B, C = logits.shape
    labels = check_labels(labels, C)
    if labels.shape[0] != B:
        raise ShapeError("labels length must match batch", logits.shape, labels.shape)
    z = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(z).sum(axis=1, keepdims=True))
    log_probs = z - log_z
    probs = np.exp(log_probs)
    rows = np.arange(B)
    loss = float(-log_probs[rows, labels].mean())
    grad = probs.copy()
    grad[rows, labels] -= 1.0
    return loss, probs, grad / B
