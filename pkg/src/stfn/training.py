"""Optimizers, plateau learning-rate decay, segment sampling and the training loop."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields
from typing import Sequence

import numpy as np

from .errors import ConfigError, ShapeError
from .layers import TRAIN
from .model import StfnModel, predict_average

EVAL_SAMPLES = 5


# -- optimizers ---------------------------------------------------------------

class SgdMomentum:
    """``v <- mu * v + g``; ``p <- p - lr * v``."""

    def __init__(self, lr: float, momentum: float = 0.9):
        if lr < 0:
            raise ConfigError(f"lr must be non-negative, got {lr}")
        self.lr = lr
        self.momentum = momentum
        self.velocity: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
        for name, p in params.items():
            g = grads[name]
            if g.shape != p.shape:
                raise ShapeError(f"gradient for {name}", p.shape, g.shape)
            v = self.velocity.setdefault(name, np.zeros_like(p))
            v *= self.momentum
            v += g
            p -= self.lr * v
        return params


class RmsProp:
    """``s <- rho * s + (1 - rho) * g^2``; ``p <- p - lr * g / (sqrt(s) + eps)``."""

    def __init__(self, lr: float, decay: float = 0.9, eps: float = 1e-8):
        if lr < 0:
            raise ConfigError(f"lr must be non-negative, got {lr}")
        self.lr = lr
        self.decay = decay
        self.eps = eps
        self.square_avg: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
        for name, p in params.items():
            g = grads[name]
            if g.shape != p.shape:
                raise ShapeError(f"gradient for {name}", p.shape, g.shape)
            s = self.square_avg.setdefault(name, np.zeros_like(p))
            s *= self.decay
            s += (1 - self.decay) * g * g
            p -= self.lr * g / (np.sqrt(s) + self.eps)
        return params


class PlateauSchedule:
    """Multiply the learning rate by ``decay_factor`` once the tracked metric
    (higher is better) has not improved by more than ``min_delta`` for
    ``patience`` consecutive epochs. Never goes below ``floor_lr``."""

    def __init__(self, initial_lr: float, decay_factor: float = 0.1, floor_lr: float = 1e-7,
                 patience: int = 10, min_delta: float = 1e-4):
        if not 0 < decay_factor < 1:
            raise ConfigError(f"decay_factor must be in (0, 1), got {decay_factor}")
        if floor_lr > initial_lr:
            raise ConfigError(f"floor_lr {floor_lr} exceeds initial_lr {initial_lr}")
        if patience < 1:
            raise ConfigError(f"patience must be >= 1, got {patience}")
        self.initial_lr = initial_lr
        self.lr = initial_lr
        self.decays = 0
        self.decay_factor = decay_factor
        self.floor_lr = floor_lr
        self.patience = patience
        self.min_delta = min_delta
        self.best = -math.inf
        self.stale = 0

    def step(self, metric: float) -> float:
        if metric > self.best + self.min_delta:
            self.best = metric
            self.stale = 0
        else:
            self.stale += 1
            if self.stale >= self.patience:
                self.stale = 0
                if self.lr > self.floor_lr:
                    self.decays += 1
                    lr = self.initial_lr * self.decay_factor ** self.decays
                    # snap rounding residue (1e-4 * 0.1**3 != 1e-7) onto the floor
                    self.lr = self.floor_lr if lr <= self.floor_lr * (1 + 1e-9) else lr
        return self.lr


# -- sampling -----------------------------------------------------------------

def segment_bounds(video_len: int, num_segments: int) -> list[tuple[int, int]]:
    if num_segments < 1:
        raise ConfigError(f"num_segments must be >= 1, got {num_segments}")
    if video_len < num_segments:
        raise ConfigError(f"video of {video_len} frames cannot hold {num_segments} segments")
    return [(s * video_len // num_segments, (s + 1) * video_len // num_segments)
            for s in range(num_segments)]


class SegmentSampler:
    def __init__(self, num_segments: int, seed: int = 0, eval_samples: int = EVAL_SAMPLES):
        if num_segments < 1:
            raise ConfigError(f"num_segments must be >= 1, got {num_segments}")
        self.num_segments = num_segments
        self.eval_samples = eval_samples
        self.rng = np.random.default_rng(seed)

    def sample_train(self, video_len: int) -> list[int]:
        """One uniformly drawn frame per segment."""
        return [int(self.rng.integers(lo, hi))
                for lo, hi in segment_bounds(video_len, self.num_segments)]

    def sample_eval(self, video_len: int) -> list[list[int]]:
        """``eval_samples`` index lists; list ``j`` takes the ``j``-th evenly
        spaced position ``floor(j * L / k)`` of every segment of length ``L``."""
        bounds = segment_bounds(video_len, self.num_segments)
        k = self.eval_samples
        return [[lo + min(j * (hi - lo) // k, hi - lo - 1) for lo, hi in bounds]
                for j in range(k)]


# -- data ---------------------------------------------------------------------

@dataclass
class Video:
    appearance: np.ndarray  # (T, d)
    motion: np.ndarray      # (T, d)
    label: int
    video_id: str = ""

    def __post_init__(self):
        if self.appearance.shape != self.motion.shape or self.appearance.ndim != 2:
            raise ShapeError(f"video {self.video_id!r} modalities disagree",
                             self.appearance.shape, self.motion.shape)

    @property
    def num_frames(self) -> int:
        return self.appearance.shape[0]

    def gather(self, indices: Sequence[int]) -> tuple[np.ndarray, np.ndarray]:
        return self.appearance[indices], self.motion[indices]


def zero_modality(videos: Sequence[Video], modality: str) -> list[Video]:
    """Copies of ``videos`` with one modality replaced by zeros."""
    if modality not in ("appearance", "motion"):
        raise ConfigError(f"unknown modality {modality!r}")
    out = []
    for v in videos:
        a, m = v.appearance, v.motion
        if modality == "appearance":
            a = np.zeros_like(a)
        else:
            m = np.zeros_like(m)
        out.append(Video(a, m, v.label, v.video_id))
    return out


# -- training -----------------------------------------------------------------

@dataclass
class TrainConfig:
    batch_size: int = 32
    max_epochs: int = 100
    seed: int = 0
    optimizer: str = "rmsprop"
    lr: float = 1e-4
    momentum: float = 0.9
    rms_decay: float = 0.9
    rms_eps: float = 1e-8
    decay_factor: float = 0.1
    floor_lr: float = 1e-7
    patience: int = 10
    min_delta: float = 1e-4
    eval_samples: int = EVAL_SAMPLES
    # optional second phase: SGD with momentum over all network parameters
    finetune_epochs: int = 0
    finetune_lr: float = 1e-3

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.max_epochs < 0 or self.finetune_epochs < 0:
            raise ConfigError("epoch counts must be non-negative")
        if self.optimizer not in ("rmsprop", "sgd"):
            raise ConfigError(f"optimizer must be 'rmsprop' or 'sgd', got {self.optimizer!r}")
        if self.lr < 0 or self.finetune_lr < 0:
            raise ConfigError("learning rates must be non-negative")
        if self.eval_samples < 1:
            raise ConfigError(f"eval_samples must be >= 1, got {self.eval_samples}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**data)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_acc: float
    lr: float


@dataclass
class TrainReport:
    records: list[EpochRecord] = field(default_factory=list)

    COLUMNS = ("epoch", "train_loss", "val_acc", "lr")

    @property
    def losses(self) -> list[float]:
        return [r.train_loss for r in self.records]

    @property
    def lrs(self) -> list[float]:
        return [r.lr for r in self.records]

    def to_text(self) -> str:
        """Whitespace-separated table: epoch, train_loss, val_acc, lr."""
        lines = [" ".join(self.COLUMNS)]
        for r in self.records:
            lines.append(f"{r.epoch} {r.train_loss:.6g} {r.val_acc:.6g} {r.lr:.6g}")
        return "\n".join(lines) + "\n"


def _check_dataset(model: StfnModel, videos: Sequence[Video], what: str) -> None:
    cfg = model.config
    for v in videos:
        if v.appearance.shape[1] != cfg.d:
            raise ConfigError(f"{what} video {v.video_id!r} has d={v.appearance.shape[1]}, model expects {cfg.d}")
        if not 0 <= v.label < cfg.num_classes:
            raise ConfigError(f"{what} video {v.video_id!r} label {v.label} >= {cfg.num_classes}")
        if v.num_frames < cfg.num_segments:
            raise ConfigError(f"{what} video {v.video_id!r} shorter than {cfg.num_segments} segments")


def _make_optimizer(kind: str, lr: float, config: TrainConfig):
    if kind == "sgd":
        return SgdMomentum(lr, config.momentum)
    return RmsProp(lr, config.rms_decay, config.rms_eps)


def _run_epoch(model, videos, sampler, optimizer, order_rng, batch_size):
    order = order_rng.permutation(len(videos))
    total, count = 0.0, 0
    for start in range(0, len(order), batch_size):
        batch = [videos[i] for i in order[start:start + batch_size]]
        pairs = [v.gather(sampler.sample_train(v.num_frames)) for v in batch]
        fa = np.stack([a for a, _ in pairs])
        fm = np.stack([m for _, m in pairs])
        labels = np.array([v.label for v in batch])
        loss, _ = model.loss(fa, fm, labels, TRAIN)
        model.backward()
        optimizer.step(dict(model.named_parameters()), dict(model.named_grads()))
        total += loss * len(batch)
        count += len(batch)
    return total / count


def train(model: StfnModel, train_videos: Sequence[Video], val_videos: Sequence[Video],
          config: TrainConfig) -> TrainReport:
    """Train in place and return the per-epoch report.

    Phase one runs ``max_epochs`` with the configured optimizer under plateau
    decay on validation accuracy. If ``finetune_epochs`` is positive, a second
    phase continues with SGD with momentum at ``finetune_lr``.
    """
    if not train_videos:
        raise ConfigError("training set is empty")
    if not val_videos:
        raise ConfigError("validation set is empty")
    _check_dataset(model, train_videos, "train")
    _check_dataset(model, val_videos, "val")
    n = model.config.num_segments
    seeds = np.random.SeedSequence(config.seed).spawn(2)
    sampler = SegmentSampler(n, seed=seeds[0], eval_samples=config.eval_samples)
    eval_sampler = SegmentSampler(n, eval_samples=config.eval_samples)
    order_rng = np.random.default_rng(seeds[1])
    report = TrainReport()

    phases = [(config.optimizer, config.lr, config.max_epochs)]
    if config.finetune_epochs:
        phases.append(("sgd", config.finetune_lr, config.finetune_epochs))
    epoch = 0
    for kind, lr, epochs in phases:
        optimizer = _make_optimizer(kind, lr, config)
        schedule = PlateauSchedule(lr, config.decay_factor, min(config.floor_lr, lr),
                                   config.patience, config.min_delta) if lr > 0 else None
        for _ in range(epochs):
            epoch += 1
            used_lr = optimizer.lr
            loss = _run_epoch(model, train_videos, sampler, optimizer, order_rng,
                              config.batch_size)
            acc = evaluate(model, val_videos, eval_sampler)
            if schedule is not None:
                optimizer.lr = schedule.step(acc)
            report.records.append(EpochRecord(epoch, loss, acc, used_lr))
    return report


def video_scores(model: StfnModel, video: Video, sampler: SegmentSampler) -> np.ndarray:
    sets = [video.gather(idx) for idx in sampler.sample_eval(video.num_frames)]
    return predict_average(model, sets)


def evaluate(model: StfnModel, videos: Sequence[Video], sampler: SegmentSampler) -> float:
    """Fraction of videos whose averaged-score argmax equals the label."""
    if not videos:
        raise ConfigError("cannot evaluate on an empty dataset")
    correct = 0
    for v in videos:
        # np.argmax returns the first maximum, so ties go to the lowest class
        correct += int(np.argmax(video_scores(model, v, sampler)) == v.label)
    return correct / len(videos)
