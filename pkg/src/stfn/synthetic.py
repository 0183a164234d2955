"""Synthetic two-modality datasets with controllable cross-modal coupling.

Each video has a latent code ``u`` carried by the appearance stream and
``v`` carried by the motion stream, embedded as a fixed direction vector that
is present only inside a temporal window of segments and buried in Gaussian
noise everywhere.

``complementary``: ``label = (u + v) mod C`` with ``u`` cycling over all
codes inside every class, so each modality on its own has the same
distribution for every class. For ``C = 2`` this is ``u XOR v``.

``redundant``: ``u = v = label``; either modality alone is enough.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .data_io import APPEARANCE, MOTION, Manifest, VideoRecord, write_feature_file, write_manifest
from .errors import ConfigError
from .training import Video, segment_bounds

COUPLINGS = ("complementary", "redundant")


@dataclass
class SyntheticSpec:
    num_classes: int = 4
    d: int = 16
    frames: int = 20
    num_segments: int = 5
    train_per_class: int = 50
    val_per_class: int = 25
    test_per_class: int = 25
    noise_std: float = 0.5
    amplitude: float = 1.0
    coupling: str = "complementary"
    seed: int = 0

    def __post_init__(self):
        if self.d < 4 or self.d % 4:
            raise ConfigError(f"d must be a positive multiple of 4, got {self.d}")
        if self.num_classes < 2:
            raise ConfigError(f"num_classes must be >= 2, got {self.num_classes}")
        if self.num_segments < 1 or self.frames < self.num_segments:
            raise ConfigError(
                f"need frames >= num_segments >= 1, got {self.frames} and {self.num_segments}")
        if min(self.train_per_class, self.val_per_class, self.test_per_class) < 0:
            raise ConfigError("per-class sample counts must be non-negative")
        if self.noise_std < 0:
            raise ConfigError(f"noise_std must be non-negative, got {self.noise_std}")
        if self.coupling not in COUPLINGS:
            raise ConfigError(f"coupling must be one of {COUPLINGS}, got {self.coupling!r}")

    def to_dict(self) -> dict:
        return asdict(self)


def signal_window(frames: int, num_segments: int) -> tuple[int, int]:
    """Frame range ``[start, stop)`` covering segments ``ceil(N/3) .. ceil(2N/3) - 1``."""
    lo = min(math.ceil(num_segments / 3), num_segments - 1)
    hi = max(math.ceil(2 * num_segments / 3), lo + 1)
    bounds = segment_bounds(frames, num_segments)
    return bounds[lo][0], bounds[hi - 1][1]


def _directions(rng: np.random.Generator, count: int, d: int) -> np.ndarray:
    """``count`` unit vectors in R^d, mutually orthogonal when ``count <= d``."""
    raw = rng.normal(size=(d, count))
    if count <= d:
        q, _ = np.linalg.qr(raw)
        return q.T
    return (raw / np.linalg.norm(raw, axis=0)).T


def generate(spec: SyntheticSpec) -> dict[str, list[Video]]:
    """In-memory dataset keyed by split name."""
    rng = np.random.default_rng(spec.seed)
    C = spec.num_classes
    dirs = _directions(rng, 2 * C, spec.d) * spec.amplitude
    app_dirs, mot_dirs = dirs[:C], dirs[C:]
    start, stop = signal_window(spec.frames, spec.num_segments)
    out: dict[str, list[Video]] = {}
    for split, per_class in (("train", spec.train_per_class), ("val", spec.val_per_class),
                             ("test", spec.test_per_class)):
        codes = []
        for label in range(C):
            for i in range(per_class):
                if spec.coupling == "complementary":
                    u = i % C
                    codes.append((label, u, (label - u) % C))
                else:
                    codes.append((label, label, label))
        order = rng.permutation(len(codes))
        videos = []
        for n, idx in enumerate(order):
            label, u, v = codes[idx]
            shape = (spec.frames, spec.d)
            app = rng.normal(0.0, spec.noise_std, shape)
            mot = rng.normal(0.0, spec.noise_std, shape)
            app[start:stop] += app_dirs[u]
            mot[start:stop] += mot_dirs[v]
            # stored as float32 on disk; keep the in-memory copy identical
            app = app.astype(np.float32).astype(np.float64)
            mot = mot.astype(np.float32).astype(np.float64)
            videos.append(Video(app, mot, int(label), f"{split}_{n:05d}"))
        out[split] = videos
    return out


def write_dataset(spec: SyntheticSpec, out_dir) -> Path:
    """Write feature files plus ``manifest.json`` into ``out_dir``; returns the manifest path."""
    out_dir = Path(out_dir)
    (out_dir / "features").mkdir(parents=True, exist_ok=True)
    manifest = Manifest(spec.num_classes, spec.d, root=out_dir)
    for split, videos in generate(spec).items():
        for v in videos:
            app = f"features/{v.video_id}.app.stfn"
            mot = f"features/{v.video_id}.mot.stfn"
            write_feature_file(out_dir / app, APPEARANCE, v.label, v.appearance)
            write_feature_file(out_dir / mot, MOTION, v.label, v.motion)
            manifest.videos.append(VideoRecord(v.video_id, app, mot, v.label, split))
    path = out_dir / "manifest.json"
    write_manifest(path, manifest)
    return path


def centroid_accuracy(train: list[Video], test: list[Video], modality: str,
                      num_classes: int) -> float:
    """Nearest class-centroid classifier on one modality's flattened frames."""
    def feats(videos):
        return np.stack([getattr(v, modality).ravel() for v in videos])

    xtr, ytr = feats(train), np.array([v.label for v in train])
    centroids = np.stack([xtr[ytr == c].mean(axis=0) for c in range(num_classes)])
    xte, yte = feats(test), np.array([v.label for v in test])
    dist = ((xte[:, None, :] - centroids[None]) ** 2).sum(axis=2)
    return float((dist.argmin(axis=1) == yte).mean())
