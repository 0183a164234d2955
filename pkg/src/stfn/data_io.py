"""On-disk formats: per-video feature files, dataset manifests, checkpoints.

Feature file (little-endian)::

    magic   4s   b"STFN"
    version u16  1
    modality u8  0 = appearance, 1 = motion
    frames  u32  T
    dim     u32  d
    label   u32
    payload T*d float32, frame-major

Checkpoint (little-endian)::

    magic   8s   b"STFNCKPT"
    version u16  1
    config  u32 length + UTF-8 JSON of the model config (sorted keys)
    count   u32  number of tensors
    per tensor, in ``StfnModel.state_dict()`` order:
        name  u16 length + UTF-8
        ndim  u8, then ndim x u32 extents
        data  float64, row-major
    crc32   u32  over every preceding byte

Manifest: JSON object ``{"format": "stfn-manifest", "version": 1,
"num_classes": C, "d": d, "videos": [...]}`` where each video record holds,
in this order, ``id``, ``appearance``, ``motion``, ``label``, ``split``.
Paths are relative to the manifest's directory.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (BadMagicError, CheckpointError, ConfigError, ManifestError,
                     NonFiniteError, TruncatedError, VersionError)
from .model import ModelConfig, StfnModel
from .training import Video

FEATURE_MAGIC = b"STFN"
FEATURE_VERSION = 1
_FEATURE_HEADER = struct.Struct("<4sHBIII")

CKPT_MAGIC = b"STFNCKPT"
CKPT_VERSION = 1

APPEARANCE = 0
MOTION = 1
SPLITS = ("train", "val", "test")


# -- feature files ------------------------------------------------------------

@dataclass
class FeatureFile:
    modality: int
    label: int
    features: np.ndarray  # (T, d) float64

    @property
    def num_frames(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]


def encode_feature_file(modality: int, label: int, features: np.ndarray) -> bytes:
    features = np.asarray(features)
    if features.ndim != 2:
        raise ValueError(f"features must be (T, d), got shape {features.shape}")
    if modality not in (APPEARANCE, MOTION):
        raise ValueError(f"modality must be 0 or 1, got {modality}")
    payload = np.ascontiguousarray(features, dtype="<f4")
    if not np.isfinite(payload).all():
        raise NonFiniteError("features contain non-finite values")
    T, d = features.shape
    return _FEATURE_HEADER.pack(FEATURE_MAGIC, FEATURE_VERSION, modality, T, d, label) + payload.tobytes()


def decode_feature_file(raw: bytes, source: str = "<bytes>") -> FeatureFile:
    if len(raw) < _FEATURE_HEADER.size:
        raise TruncatedError(f"{source}: header truncated ({len(raw)} bytes)")
    magic, version, modality, T, d, label = _FEATURE_HEADER.unpack_from(raw)
    if magic != FEATURE_MAGIC:
        raise BadMagicError(f"{source}: bad magic {magic!r}")
    if version != FEATURE_VERSION:
        raise VersionError(f"{source}: unsupported version {version}")
    if modality not in (APPEARANCE, MOTION):
        raise BadMagicError(f"{source}: unknown modality tag {modality}")
    expected = _FEATURE_HEADER.size + 4 * T * d
    if len(raw) < expected:
        raise TruncatedError(f"{source}: payload has {len(raw) - _FEATURE_HEADER.size} bytes, header implies {4 * T * d}")
    if len(raw) > expected:
        raise TruncatedError(f"{source}: {len(raw) - expected} trailing bytes after payload")
    values = np.frombuffer(raw, dtype="<f4", count=T * d, offset=_FEATURE_HEADER.size)
    if not np.isfinite(values).all():
        raise NonFiniteError(f"{source}: payload contains non-finite values")
    return FeatureFile(modality, label, values.astype(np.float64).reshape(T, d))


def write_feature_file(path, modality: int, label: int, features: np.ndarray) -> None:
    Path(path).write_bytes(encode_feature_file(modality, label, features))


def read_feature_file(path) -> FeatureFile:
    return decode_feature_file(Path(path).read_bytes(), str(path))


# -- manifest -----------------------------------------------------------------

@dataclass
class VideoRecord:
    id: str
    appearance: str
    motion: str
    label: int
    split: str


@dataclass
class Manifest:
    num_classes: int
    d: int
    videos: list[VideoRecord] = field(default_factory=list)
    root: Path = Path(".")

    def to_json(self) -> str:
        body = {
            "format": "stfn-manifest",
            "version": 1,
            "num_classes": self.num_classes,
            "d": self.d,
            "videos": [
                {"id": v.id, "appearance": v.appearance, "motion": v.motion,
                 "label": v.label, "split": v.split}
                for v in self.videos
            ],
        }
        return json.dumps(body, indent=1) + "\n"

    def records(self, split: str) -> list[VideoRecord]:
        return [v for v in self.videos if v.split == split]

    def load_split(self, split: str) -> list[Video]:
        """Read and cross-check both modalities of every video in ``split``."""
        if split not in SPLITS:
            raise ManifestError(f"unknown split {split!r}")
        videos = []
        for rec in self.records(split):
            app = read_feature_file(self.root / rec.appearance)
            mot = read_feature_file(self.root / rec.motion)
            if app.modality != APPEARANCE or mot.modality != MOTION:
                raise ManifestError(f"video {rec.id!r}: modality tags are swapped or wrong")
            if app.num_frames != mot.num_frames:
                raise ManifestError(f"video {rec.id!r}: appearance has {app.num_frames} frames, motion {mot.num_frames}")
            if not app.label == mot.label == rec.label:
                raise ManifestError(f"video {rec.id!r}: labels disagree ({app.label}, {mot.label}, manifest {rec.label})")
            if app.dim != self.d or mot.dim != self.d:
                raise ManifestError(f"video {rec.id!r}: feature dim differs from manifest d={self.d}")
            videos.append(Video(app.features, mot.features, rec.label, rec.id))
        return videos


def write_manifest(path, manifest: Manifest) -> None:
    Path(path).write_text(manifest.to_json())


def read_manifest(path) -> Manifest:
    path = Path(path)
    try:
        body = json.loads(path.read_text())
    except FileNotFoundError:
        raise
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ManifestError(f"{path}: not valid JSON ({exc})") from None
    if not isinstance(body, dict) or body.get("format") != "stfn-manifest":
        raise ManifestError(f"{path}: not an stfn manifest")
    if body.get("version") != 1:
        raise VersionError(f"{path}: unsupported manifest version {body.get('version')}")
    try:
        C, d = int(body["num_classes"]), int(body["d"])
        videos = [VideoRecord(str(v["id"]), str(v["appearance"]), str(v["motion"]),
                              int(v["label"]), str(v["split"])) for v in body["videos"]]
    except (KeyError, TypeError, ValueError) as exc:
        raise ManifestError(f"{path}: malformed manifest ({exc})") from None
    for v in videos:
        if not 0 <= v.label < C:
            raise ManifestError(f"{path}: video {v.id!r} label {v.label} outside [0, {C})")
        if v.split not in SPLITS:
            raise ManifestError(f"{path}: video {v.id!r} has unknown split {v.split!r}")
    return Manifest(C, d, videos, path.parent)


# -- checkpoints --------------------------------------------------------------

def encode_checkpoint(model: StfnModel) -> bytes:
    config = json.dumps(model.config.to_dict(), sort_keys=True).encode()
    parts = [CKPT_MAGIC, struct.pack("<HI", CKPT_VERSION, len(config)), config]
    state = model.state_dict()
    parts.append(struct.pack("<I", len(state)))
    for name, tensor in state.items():
        key = name.encode()
        parts.append(struct.pack("<H", len(key)) + key)
        parts.append(struct.pack(f"<B{tensor.ndim}I", tensor.ndim, *tensor.shape))
        parts.append(np.ascontiguousarray(tensor, dtype="<f8").tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


class _Reader:
    def __init__(self, raw: bytes, source: str):
        self.raw, self.pos, self.source = raw, 0, source

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.raw):
            raise CheckpointError(f"{self.source}: truncated checkpoint")
        chunk = self.raw[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        s = struct.Struct(fmt)
        return s.unpack(self.take(s.size))


def decode_checkpoint(raw: bytes, expected: ModelConfig | None = None,
                      source: str = "<bytes>") -> StfnModel:
    if raw[:len(CKPT_MAGIC)] != CKPT_MAGIC:
        raise BadMagicError(f"{source}: bad checkpoint magic")
    if len(raw) < len(CKPT_MAGIC) + 4:
        raise CheckpointError(f"{source}: truncated checkpoint")
    body, (crc,) = raw[:-4], struct.unpack("<I", raw[-4:])
    r = _Reader(body, source)
    r.take(len(CKPT_MAGIC))
    version, cfg_len = r.unpack("<HI")
    if version != CKPT_VERSION:
        raise VersionError(f"{source}: unsupported checkpoint version {version}")
    if zlib.crc32(body) != crc:
        raise CheckpointError(f"{source}: checksum mismatch (corrupt or truncated)")
    try:
        config = ModelConfig.from_dict(json.loads(r.take(cfg_len)))
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise CheckpointError(f"{source}: unreadable config ({exc})") from None
    if expected is not None and expected.to_dict() != config.to_dict():
        diff = {k: (v, config.to_dict()[k]) for k, v in expected.to_dict().items()
                if config.to_dict()[k] != v}
        raise ConfigError(f"{source}: checkpoint config differs from requested: {diff}")
    (count,) = r.unpack("<I")
    state = {}
    for _ in range(count):
        (name_len,) = r.unpack("<H")
        name = r.take(name_len).decode()
        (ndim,) = r.unpack("<B")
        shape = r.unpack(f"<{ndim}I")
        n = int(np.prod(shape, dtype=np.int64))
        state[name] = np.frombuffer(r.take(8 * n), dtype="<f8").reshape(shape)
    if r.pos != len(body):
        raise CheckpointError(f"{source}: {len(body) - r.pos} unexpected trailing bytes")
    model = StfnModel(config)
    try:
        model.load_state_dict(state)
    except (ConfigError, ValueError) as exc:
        raise CheckpointError(f"{source}: {exc}") from None
    return model


def save_checkpoint(model: StfnModel, path) -> None:
    Path(path).write_bytes(encode_checkpoint(model))


def load_checkpoint(path, expected: ModelConfig | None = None) -> StfnModel:
    return decode_checkpoint(Path(path).read_bytes(), expected, str(path))
