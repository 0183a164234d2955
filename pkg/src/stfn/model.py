"""Full two-stream fusion network: Res-Inc stages, fusion wiring, softmax heads."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from typing import Sequence

import numpy as np

from .errors import ConfigError, ContextError, ShapeError
from .fusion import ArchVariant, Fusion, FusionDirection, FusionOp
from .layers import TRAIN, Affine, Module, _check_mode, check_labels, softmax, softmax_backward
from .res_inc import Stage


@dataclass
class ModelConfig:
    d: int = 2048
    num_classes: int = 2
    num_segments: int = 5
    variant: ArchVariant = ArchVariant.TWO_STAGE
    fusion_op: FusionOp = FusionOp.AVERAGE
    direction: FusionDirection = FusionDirection.BIDIRECTIONAL
    blocks_per_stage: int = 1

    def __post_init__(self):
        self.variant = ArchVariant.parse(self.variant)
        self.fusion_op = FusionOp.parse(self.fusion_op)
        self.direction = FusionDirection.parse(self.direction)
        for name in ("d", "num_classes", "num_segments", "blocks_per_stage"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, (int, np.integer)):
                raise ConfigError(f"{name} must be an integer, got {value!r}")
            setattr(self, name, int(value))
        if self.d < 4 or self.d % 4:
            raise ConfigError(f"d must be a positive multiple of 4, got {self.d}")
        if self.num_classes < 2:
            raise ConfigError(f"num_classes must be >= 2, got {self.num_classes}")
        if self.num_segments < 1:
            raise ConfigError(f"num_segments must be >= 1, got {self.num_segments}")
        if self.blocks_per_stage < 1:
            raise ConfigError(f"blocks_per_stage must be >= 1, got {self.blocks_per_stage}")

    def to_dict(self) -> dict:
        return {k: (str(v) if hasattr(v, "value") else v) for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**data)

    @property
    def two_heads(self) -> bool:
        return self.variant is not ArchVariant.CONCAT_FIRST


def _log_softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


class StfnModel(Module):
    """Scores are the sum of two head probabilities (rows sum to 2), or a
    single head's probabilities for the concat-first variant."""

    def __init__(self, config: ModelConfig, seed: int = 0):
        super().__init__()
        self.config = config
        rng = np.random.default_rng(seed)
        d, C, nb = config.d, config.num_classes, config.blocks_per_stage
        if config.variant is ArchVariant.CONCAT_FIRST:
            self.stage = self.add("stage", Stage.build(2 * d, nb, rng))
            self.head = self.add("head", Affine(2 * d, C, rng))
        else:
            self.stage1_a = self.add("stage1_a", Stage.build(d, nb, rng))
            self.stage1_m = self.add("stage1_m", Stage.build(d, nb, rng))
            if config.variant is ArchVariant.TWO_STAGE:
                self.stage2_a = self.add("stage2_a", Stage.build(d, nb, rng))
                self.stage2_m = self.add("stage2_m", Stage.build(d, nb, rng))
            self.head_a = self.add("head_a", Affine(d, C, rng))
            self.head_m = self.add("head_m", Affine(d, C, rng))
            self.fusion = Fusion(config.fusion_op, config.direction)
        self._ctx = None
        self._pending = None

    def _check_inputs(self, fa, fm):
        cfg = self.config
        if fa.shape != fm.shape:
            raise ShapeError("appearance and motion inputs differ", fa.shape, fm.shape)
        if fa.ndim != 3 or fa.shape[1] != cfg.num_segments or fa.shape[2] != cfg.d:
            raise ShapeError(
                f"expected (B, {cfg.num_segments}, {cfg.d}) inputs", fa.shape)

    def forward(self, fa: np.ndarray, fm: np.ndarray, mode: str = TRAIN) -> np.ndarray:
        _check_mode(mode)
        fa = np.asarray(fa, dtype=np.float64)
        fm = np.asarray(fm, dtype=np.float64)
        self._check_inputs(fa, fm)
        n = fa.shape[1]
        if self.config.variant is ArchVariant.CONCAT_FIRST:
            q = self.stage.forward(np.concatenate([fa, fm], axis=2), mode)
            logits = self.head.forward(q.mean(axis=1))
            self._ctx = (n, (logits,))
            self._pending = None
            return softmax(logits)
        pa = self.stage1_a.forward(fa, mode)
        pm = self.stage1_m.forward(fm, mode)
        qa, qm = self.fusion.forward(pa, pm)
        if self.config.variant is ArchVariant.TWO_STAGE:
            qa = self.stage2_a.forward(qa, mode)
            qm = self.stage2_m.forward(qm, mode)
        logits_a = self.head_a.forward(qa.mean(axis=1))
        logits_m = self.head_m.forward(qm.mean(axis=1))
        self._ctx = (n, (logits_a, logits_m))
        self._pending = None
        return softmax(logits_a) + softmax(logits_m)

    def loss(self, fa, fm, labels, mode: str = TRAIN) -> tuple[float, np.ndarray]:
        """Forward pass plus cross-entropy of the normalized scores.

        For two-head variants the scores are halved before taking the log so
        they form a proper distribution. The logit gradients are cached for a
        following :meth:`backward` call.
        """
        scores = self.forward(fa, fm, mode)
        labels = check_labels(labels, self.config.num_classes)
        if labels.shape[0] != scores.shape[0]:
            raise ShapeError("labels length must match batch", scores.shape, labels.shape)
        all_logits = self._ctx[1]
        B = scores.shape[0]
        rows = np.arange(B)
        log_probs = [_log_softmax(z) for z in all_logits]
        picked = [lp[rows, labels] for lp in log_probs]
        if len(picked) == 2:
            log_target = np.logaddexp(picked[0], picked[1]) - np.log(2.0)
        else:
            log_target = picked[0]
        loss = float(-log_target.mean())
        grads = []
        for lp, pk in zip(log_probs, picked):
            # share of the target probability owned by this head
            r = np.exp(pk - log_target - np.log(len(picked)))
            g = np.exp(lp)
            g[rows, labels] -= 1.0
            grads.append(g * (r / B)[:, None])
        self._pending = tuple(grads)
        return loss, scores

    def backward(self, grad_scores: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
        """Backpropagate into every parameter; returns input gradients.

        With no argument, uses the loss gradient cached by :meth:`loss`.
        Otherwise ``grad_scores`` is the gradient of some scalar with respect
        to the ``(B, C)`` scores returned by :meth:`forward`.
        """
        if self._ctx is None:
            raise ContextError("StfnModel.backward without forward")
        n, all_logits = self._ctx
        if grad_scores is None:
            if self._pending is None:
                raise ContextError("backward() without arguments needs a prior loss() call")
            grad_logits = self._pending
        else:
            grad_logits = tuple(softmax_backward(softmax(z), grad_scores) for z in all_logits)
        self._ctx = None
        self._pending = None

        def unpool(g):
            return np.repeat(g[:, None, :] / n, n, axis=1)

        if self.config.variant is ArchVariant.CONCAT_FIRST:
            g = self.stage.backward(unpool(self.head.backward(grad_logits[0])))
            d = self.config.d
            return g[:, :, :d], g[:, :, d:]
        ga = unpool(self.head_a.backward(grad_logits[0]))
        gm = unpool(self.head_m.backward(grad_logits[1]))
        if self.config.variant is ArchVariant.TWO_STAGE:
            ga = self.stage2_a.backward(ga)
            gm = self.stage2_m.backward(gm)
        ga, gm = self.fusion.backward(ga, gm)
        return self.stage1_a.backward(ga), self.stage1_m.backward(gm)


def score_loss(scores: np.ndarray, labels, two_heads: bool) -> float:
    """Loss computed from scores alone (reference path, no caching)."""
    labels = np.asarray(labels)
    p = scores[np.arange(len(labels)), labels]
    if two_heads:
        p = p / 2.0
    return float(-np.log(p).mean())


def predict_average(model: StfnModel, sample_sets: Sequence[tuple[np.ndarray, np.ndarray]]) -> np.ndarray:
    """Mean eval-mode scores over several ``(fa, fm)`` views of one video.

    Each element is a pair of ``(N, d)`` sequences; returns a ``(C,)`` vector.
    """
    if not sample_sets:
        raise ConfigError("predict_average needs at least one sample set")
    fa = np.stack([np.asarray(a, dtype=np.float64) for a, _ in sample_sets])
    fm = np.stack([np.asarray(m, dtype=np.float64) for _, m in sample_sets])
    return model.forward(fa, fm, mode="eval").mean(axis=0)
