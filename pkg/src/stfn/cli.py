"""Command-line entry point: ``stfn {gen,train,eval,gradcheck,sweep}``.

Every option can also come from a JSON config file passed with ``--config``;
keys are the option names with dashes replaced by underscores. Command-line
values override the file. Exit codes: 0 success, 1 check failure, 2 usage or
configuration error.
"""

from __future__ import annotations

import argparse
import itertools
import json
import logging
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import data_io, gradcheck
from .errors import StfnError
from .model import ModelConfig, StfnModel
from .synthetic import SyntheticSpec, write_dataset
from .training import SegmentSampler, TrainConfig, evaluate, train, video_scores

log = logging.getLogger("stfn")

EXIT_OK, EXIT_CHECK_FAILED, EXIT_USAGE = 0, 1, 2

MODEL_KEYS = ("variant", "fusion_op", "direction", "num_segments", "blocks_per_stage")
TRAIN_KEYS = tuple(f.name for f in fields(TrainConfig))


class UsageError(Exception):
    pass


def _add_options(parser: argparse.ArgumentParser, keys, types) -> None:
    for key in keys:
        parser.add_argument("--" + key.replace("_", "-"), dest=key, type=types[key], default=None)


def _types_of(cls) -> dict:
    defaults = cls()
    out = {}
    for f in fields(cls):
        value = getattr(defaults, f.name)
        out[f.name] = str if hasattr(value, "value") or isinstance(value, str) else type(value)
    return out


def _resolve(args: argparse.Namespace, keys, defaults: dict) -> dict:
    """Merge defaults < config file < command line, rejecting unknown file keys."""
    resolved = dict(defaults)
    if args.config:
        try:
            loaded = json.loads(Path(args.config).read_text())
        except FileNotFoundError:
            raise UsageError(f"config file not found: {args.config}") from None
        except json.JSONDecodeError as exc:
            raise UsageError(f"config file {args.config} is not valid JSON: {exc}") from None
        if not isinstance(loaded, dict):
            raise UsageError(f"config file {args.config} must hold a JSON object")
        unknown = set(loaded) - set(keys)
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        resolved.update(loaded)
    for key in keys:
        value = getattr(args, key, None)
        if value is not None:
            resolved[key] = value
    return resolved


def _write_json(path: Path, data: dict) -> None:
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")


def _split_config(resolved: dict, manifest: data_io.Manifest):
    for key, actual in (("d", manifest.d), ("num_classes", manifest.num_classes)):
        if resolved.get(key) is not None and int(resolved[key]) != actual:
            raise UsageError(f"config {key}={resolved[key]} but the manifest has {actual}")
    model_cfg = ModelConfig(d=manifest.d, num_classes=manifest.num_classes,
                            **{k: resolved[k] for k in MODEL_KEYS if k in resolved})
    train_cfg = TrainConfig.from_dict({k: resolved[k] for k in TRAIN_KEYS if k in resolved})
    return model_cfg, train_cfg


def _load_manifest(path) -> data_io.Manifest:
    if path is None:
        raise UsageError("a manifest is required (--manifest or 'manifest' config key)")
    try:
        return data_io.read_manifest(path)
    except FileNotFoundError:
        raise UsageError(f"manifest not found: {path}") from None


# -- gen ----------------------------------------------------------------------

GEN_FLAGS = {
    "classes": "num_classes", "d": "d", "frames": "frames", "segments": "num_segments",
    "train_per_class": "train_per_class", "val_per_class": "val_per_class",
    "test_per_class": "test_per_class", "noise": "noise_std", "amplitude": "amplitude",
    "coupling": "coupling", "seed": "seed",
}


def cmd_gen(args) -> int:
    keys = tuple(GEN_FLAGS) + ("out",)
    resolved = _resolve(args, keys, {"out": None})
    if resolved["out"] is None:
        raise UsageError("gen needs --out")
    spec = SyntheticSpec(**{GEN_FLAGS[k]: v for k, v in resolved.items() if k in GEN_FLAGS})
    path = write_dataset(spec, resolved["out"])
    _write_json(Path(resolved["out"]) / "gen_config.json", spec.to_dict())
    print(path)
    return EXIT_OK


# -- train / eval -------------------------------------------------------------

def _train_one(resolved: dict, manifest: data_io.Manifest):
    model_cfg, train_cfg = _split_config(resolved, manifest)
    model = StfnModel(model_cfg, seed=train_cfg.seed)
    report = train(model, manifest.load_split("train"), manifest.load_split("val"), train_cfg)
    return model, model_cfg, train_cfg, report


def cmd_train(args) -> int:
    keys = ("manifest", "out", "d", "num_classes") + MODEL_KEYS + TRAIN_KEYS
    resolved = _resolve(args, keys, {"manifest": None, "out": None})
    if resolved["out"] is None:
        raise UsageError("train needs --out")
    manifest = _load_manifest(resolved["manifest"])
    model, model_cfg, train_cfg, report = _train_one(resolved, manifest)
    out = Path(resolved["out"])
    out.mkdir(parents=True, exist_ok=True)
    data_io.save_checkpoint(model, out / "checkpoint.stfn")
    (out / "report.txt").write_text(report.to_text())
    _write_json(out / "config.json", {"manifest": str(resolved["manifest"]), "out": str(out),
                                      **model_cfg.to_dict(), **train_cfg.to_dict()})
    last = report.records[-1] if report.records else None
    if last is not None:
        print(f"epochs {last.epoch} train_loss {last.train_loss:.6g} val_acc {last.val_acc:.6g}")
    print(out / "checkpoint.stfn")
    return EXIT_OK


def predictions_table(model: StfnModel, videos, eval_samples: int) -> tuple[float, str]:
    sampler = SegmentSampler(model.config.num_segments, eval_samples=eval_samples)
    C = model.config.num_classes
    lines = ["video_id label predicted " + " ".join(f"score_{c}" for c in range(C))]
    correct = 0
    for v in videos:
        scores = video_scores(model, v, sampler)
        pred = int(np.argmax(scores))
        correct += pred == v.label
        lines.append(f"{v.video_id} {v.label} {pred} " + " ".join(f"{s:.6g}" for s in scores))
    return correct / len(videos), "\n".join(lines) + "\n"


def cmd_eval(args) -> int:
    keys = ("checkpoint", "manifest", "split", "predictions", "eval_samples")
    resolved = _resolve(args, keys, {"checkpoint": None, "manifest": None, "split": "test",
                                     "predictions": None, "eval_samples": 5})
    if resolved["checkpoint"] is None:
        raise UsageError("eval needs --checkpoint")
    manifest = _load_manifest(resolved["manifest"])
    try:
        model = data_io.load_checkpoint(resolved["checkpoint"])
    except FileNotFoundError:
        raise UsageError(f"checkpoint not found: {resolved['checkpoint']}") from None
    if model.config.d != manifest.d or model.config.num_classes != manifest.num_classes:
        raise UsageError("checkpoint and manifest disagree on d or num_classes")
    videos = manifest.load_split(resolved["split"])
    if not videos:
        raise UsageError(f"split {resolved['split']!r} is empty")
    acc, table = predictions_table(model, videos, int(resolved["eval_samples"]))
    pred_path = resolved["predictions"] or str(
        Path(resolved["checkpoint"]).with_name(f"predictions_{resolved['split']}.txt"))
    Path(pred_path).write_text(table)
    print(f"{acc:.4f}")
    return EXIT_OK


# -- gradcheck ----------------------------------------------------------------

def cmd_gradcheck(args) -> int:
    keys = ("seed", "tolerance", "sabotage")
    resolved = _resolve(args, keys, {"seed": 0, "tolerance": gradcheck.TOLERANCE, "sabotage": None})
    try:
        results = gradcheck.run_gradcheck(int(resolved["seed"]), resolved["sabotage"],
                                          float(resolved["tolerance"]))
    except KeyError as exc:
        raise UsageError(str(exc)) from None
    width = max(len(r.component) for r in results)
    print(f"{'component':<{width}}  max_rel_error  status")
    for r in results:
        print(f"{r.component:<{width}}  {r.max_rel_error:<13.6g}  {'PASS' if r.passed else 'FAIL'}")
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} passed")
    return EXIT_CHECK_FAILED if failed else EXIT_OK


# -- sweep --------------------------------------------------------------------

GRID_AXES = ("variant", "fusion_op", "direction", "num_segments")


def cmd_sweep(args) -> int:
    keys = ("manifest", "out", "d", "num_classes", "blocks_per_stage") + GRID_AXES + TRAIN_KEYS
    defaults = {"manifest": None, "out": None, "variant": ["two_stage"], "fusion_op": ["average"],
                "direction": ["bidirectional"], "num_segments": [5]}
    resolved = _resolve(args, keys, defaults)
    for axis in GRID_AXES:
        if not isinstance(resolved[axis], list):
            resolved[axis] = [resolved[axis]]
        if not resolved[axis]:
            raise UsageError(f"grid axis {axis!r} is empty")
    manifest = _load_manifest(resolved["manifest"])
    test = manifest.load_split("test")
    if not test:
        raise UsageError("sweep needs a non-empty test split")
    base = {k: v for k, v in resolved.items() if k not in GRID_AXES}
    lines = ["variant fusion_op direction num_segments test_acc"]
    for cell in itertools.product(*(resolved[a] for a in GRID_AXES)):
        cell_cfg = {**base, **dict(zip(GRID_AXES, cell))}
        model, model_cfg, train_cfg, _ = _train_one(cell_cfg, manifest)
        acc = evaluate(model, test, SegmentSampler(model_cfg.num_segments,
                                                   eval_samples=train_cfg.eval_samples))
        row = (f"{model_cfg.variant} {model_cfg.fusion_op} {model_cfg.direction} "
               f"{model_cfg.num_segments} {acc:.6g}")
        log.info(row)
        lines.append(row)
    table = "\n".join(lines) + "\n"
    if resolved["out"]:
        out = Path(resolved["out"])
        out.mkdir(parents=True, exist_ok=True)
        (out / "sweep.txt").write_text(table)
        _write_json(out / "config.json", resolved)
    sys.stdout.write(table)
    return EXIT_OK


# -- parser -------------------------------------------------------------------

def _grid_list(kind):
    def parse(text):
        return [kind(t) for t in text.split(",") if t]
    return parse


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stfn", description="Train and evaluate a two-stream temporal fusion head.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic two-modality dataset")
    p.add_argument("--config")
    p.add_argument("--out")
    spec_types = _types_of(SyntheticSpec)
    _add_options(p, GEN_FLAGS, {k: spec_types[v] for k, v in GEN_FLAGS.items()})
    p.set_defaults(func=cmd_gen)

    model_types = _types_of(ModelConfig)
    train_types = _types_of(TrainConfig)

    p = sub.add_parser("train", help="train on a manifest's train split")
    p.add_argument("--config")
    p.add_argument("--manifest")
    p.add_argument("--out")
    _add_options(p, MODEL_KEYS, model_types)
    _add_options(p, TRAIN_KEYS, train_types)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on one split")
    p.add_argument("--config")
    p.add_argument("--checkpoint")
    p.add_argument("--manifest")
    p.add_argument("--split", choices=data_io.SPLITS)
    p.add_argument("--predictions")
    p.add_argument("--eval-samples", dest="eval_samples", type=int)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference check of every component")
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--tolerance", type=float)
    p.add_argument("--sabotage", metavar="COMPONENT",
                   help="flip the sign of one component's gradient (self-test)")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("sweep", help="train and test every cell of an ablation grid")
    p.add_argument("--config")
    p.add_argument("--manifest")
    p.add_argument("--out")
    p.add_argument("--blocks-per-stage", dest="blocks_per_stage", type=int)
    for axis in ("variant", "fusion_op", "direction"):
        p.add_argument("--" + axis.replace("_", "-"), dest=axis, type=_grid_list(str),
                       help="comma-separated values")
    p.add_argument("--num-segments", dest="num_segments", type=_grid_list(int),
                   help="comma-separated values")
    _add_options(p, TRAIN_KEYS, train_types)
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (UsageError, StfnError, TypeError) as exc:
        print(f"stfn {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
