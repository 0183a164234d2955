"""Central finite-difference checks for every differentiable component.

Relative error of an analytic gradient ``a`` against a numeric one ``n`` is
``max|a - n| / max(max|a|, max|n|, floor)``. The floor keeps gradients that
are exactly zero in theory (a conv bias feeding train-mode batch norm) from
turning rounding noise into a relative error of 1.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable

import numpy as np

from .fusion import ArchVariant, FusionDirection, FusionOp, fuse, fuse_backward
from .layers import EVAL, TRAIN, Affine, BatchNorm1d, Conv1d, ReLU, softmax_cross_entropy
from .model import ModelConfig, StfnModel
from .res_inc import ResIncBlock

STEP = 1e-5
FLOOR = 1e-6
TOLERANCE = 1e-4


def numeric_grad(f: Callable[[], float], x: np.ndarray, h: float = STEP) -> np.ndarray:
    """d f / d x by central differences, perturbing ``x`` in place."""
    grad = np.zeros_like(x)
    flat, gflat = x.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f()
        flat[i] = orig - h
        fm = f()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * h)
    return grad


def rel_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = FLOOR) -> float:
    scale = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0), floor)
    return float(np.abs(analytic - numeric).max(initial=0.0) / scale)


@dataclass
class CheckResult:
    component: str
    max_rel_error: float
    tolerance: float = TOLERANCE

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance


def _module_check(module, run: Callable[[np.ndarray], np.ndarray], x: np.ndarray,
                  rng: np.random.Generator, sign: float = 1.0) -> float:
    """Check input and parameter grads of ``sum(run(x) * R)``."""
    weights = rng.uniform(-1, 1, size=run(x).shape)

    def objective():
        return float((run(x) * weights).sum())

    run(x)
    grad_x = module.backward(weights) * sign
    analytic = dict(module.named_grads())
    errors = [rel_error(grad_x, numeric_grad(objective, x))]
    for name, p in module.named_parameters():
        errors.append(rel_error(analytic[name] * sign, numeric_grad(objective, p)))
    return max(errors)


def check_conv1d(kernel_size: int, rng, sign=1.0) -> float:
    layer = Conv1d(kernel_size, 3, 2, rng)
    layer.params["bias"][:] = rng.uniform(-1, 1, 2)
    return _module_check(layer, layer.forward, rng.uniform(-1, 1, (2, 4, 3)), rng, sign)


def check_batchnorm(mode: str, rng, sign=1.0) -> float:
    layer = BatchNorm1d(3)
    layer.params["gamma"][:] = rng.uniform(0.5, 1.5, 3)
    layer.params["beta"][:] = rng.uniform(-1, 1, 3)
    layer.buffers["running_mean"][:] = rng.uniform(-0.5, 0.5, 3)
    layer.buffers["running_var"][:] = rng.uniform(0.5, 1.5, 3)
    return _module_check(layer, lambda x: layer.forward(x, mode),
                         rng.uniform(-1, 1, (2, 4, 3)), rng, sign)


def check_relu(rng, sign=1.0) -> float:
    layer = ReLU()
    x = rng.uniform(-1, 1, (3, 5))
    x[np.abs(x) < 1e-3] = 0.5  # keep away from the kink
    return _module_check(layer, layer.forward, x, rng, sign)


def check_affine(rng, sign=1.0) -> float:
    layer = Affine(4, 3, rng)
    layer.params["bias"][:] = rng.uniform(-1, 1, 3)
    return _module_check(layer, layer.forward, rng.uniform(-1, 1, (3, 4)), rng, sign)


def check_softmax_ce(rng, sign=1.0) -> float:
    logits = rng.uniform(-1, 1, (4, 3))
    labels = rng.integers(0, 3, 4)
    _, _, grad = softmax_cross_entropy(logits, labels)
    numeric = numeric_grad(lambda: softmax_cross_entropy(logits, labels)[0], logits)
    return rel_error(grad * sign, numeric)


def check_fusion(op: FusionOp, rng, sign=1.0) -> float:
    pa = rng.uniform(-1, 1, (2, 3, 4))
    pm = rng.uniform(-1, 1, (2, 3, 4))
    if op is FusionOp.MAXIMUM:
        # keep the two streams well separated so no step crosses a tie
        pm = np.where(np.abs(pa - pm) < 1e-3, pa + 0.1, pm)
    weights = rng.uniform(-1, 1, pa.shape)

    def objective():
        return float((fuse(op, pa, pm) * weights).sum())

    ga, gm = fuse_backward(op, pa, pm, weights)
    return max(rel_error(ga * sign, numeric_grad(objective, pa)),
               rel_error(gm * sign, numeric_grad(objective, pm)))


def check_res_inc(rng, sign=1.0) -> float:
    block = ResIncBlock(4, rng)
    for _, mod in block._walk():
        if "beta" in mod.params:
            mod.params["beta"][:] = rng.uniform(-0.5, 0.5, mod.params["beta"].shape)
    return _module_check(block, lambda x: block.forward(x, TRAIN),
                         rng.uniform(-1, 1, (2, 3, 4)), rng, sign)


def check_model(config: ModelConfig, rng, sign=1.0, batch: int = 2) -> float:
    model = StfnModel(config, seed=int(rng.integers(2**31)))
    shape = (batch, config.num_segments, config.d)
    fa = rng.uniform(-1, 1, shape)
    fm = rng.uniform(-1, 1, shape)
    labels = rng.integers(0, config.num_classes, batch)

    def objective():
        return model.loss(fa, fm, labels)[0]

    objective()
    gfa, gfm = model.backward()
    analytic = dict(model.named_grads())
    errors = [rel_error(gfa * sign, numeric_grad(objective, fa)),
              rel_error(gfm * sign, numeric_grad(objective, fm))]
    for name, p in model.named_parameters():
        errors.append(rel_error(analytic[name] * sign, numeric_grad(objective, p)))
    return max(errors)


def tiny_model_configs() -> Iterable[ModelConfig]:
    for variant in ArchVariant:
        for direction in FusionDirection:
            for op in FusionOp:
                yield ModelConfig(d=4, num_classes=2, num_segments=3, variant=variant,
                                  fusion_op=op, direction=direction)


def component_names() -> list[str]:
    names = [f"conv1d_k{k}" for k in (2, 3, 4, 5)]
    names += ["batchnorm_train", "batchnorm_eval", "relu", "affine", "softmax_ce"]
    names += [f"fusion_{op.value}" for op in FusionOp]
    names += ["res_inc"]
    names += [f"model_{c.variant.value}_{c.direction.value}_{c.fusion_op.value}"
              for c in tiny_model_configs()]
    return names


def run_gradcheck(seed: int = 0, sabotage: str | None = None,
                  tolerance: float = TOLERANCE) -> list[CheckResult]:
    """Run every check once. ``sabotage`` flips the sign of one component's
    analytic gradient, which must then be reported as a failure."""
    rng = np.random.default_rng(seed)
    checks: list[tuple[str, Callable[[float], float]]] = []
    for k in (2, 3, 4, 5):
        checks.append((f"conv1d_k{k}", lambda s, k=k: check_conv1d(k, rng, s)))
    checks.append(("batchnorm_train", lambda s: check_batchnorm(TRAIN, rng, s)))
    checks.append(("batchnorm_eval", lambda s: check_batchnorm(EVAL, rng, s)))
    checks.append(("relu", lambda s: check_relu(rng, s)))
    checks.append(("affine", lambda s: check_affine(rng, s)))
    checks.append(("softmax_ce", lambda s: check_softmax_ce(rng, s)))
    for op in FusionOp:
        checks.append((f"fusion_{op.value}", lambda s, op=op: check_fusion(op, rng, s)))
    checks.append(("res_inc", lambda s: check_res_inc(rng, s)))
    for cfg in tiny_model_configs():
        name = f"model_{cfg.variant.value}_{cfg.direction.value}_{cfg.fusion_op.value}"
        checks.append((name, lambda s, cfg=cfg: check_model(cfg, rng, s)))
    if sabotage is not None and sabotage not in {n for n, _ in checks}:
        raise KeyError(f"unknown component {sabotage!r}")
    return [CheckResult(name, fn(-1.0 if name == sabotage else 1.0), tolerance)
            for name, fn in checks]
