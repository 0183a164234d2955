"""Exit criteria for the package, one test per criterion.

Each test records a PASS/FAIL line in ``RESULTS``; the conftest prints them
in the pytest terminal summary. Running this file directly
(``python tests/test_acceptance.py``) prints the same lines.
"""

import itertools
import time

import numpy as np
import pytest

from stfn import data_io
from stfn.fusion import ArchVariant, FusionDirection, FusionOp, fuse, wire
from stfn.gradcheck import run_gradcheck
from stfn.layers import softmax
from stfn.model import ModelConfig, StfnModel
from stfn.res_inc import ResIncBlock
from stfn.synthetic import SyntheticSpec, centroid_accuracy, generate, write_dataset
from stfn.training import (PlateauSchedule, SegmentSampler, TrainConfig, Video, evaluate,
                           segment_bounds, train, video_scores, zero_modality)

RESULTS: list[str] = []

# synthetic complementary-modality experiment
SYNTH = SyntheticSpec(num_classes=4, d=16, frames=20, num_segments=5, train_per_class=50,
                      val_per_class=25, test_per_class=25, noise_std=0.3, seed=0)
SYNTH_TRAIN = TrainConfig(max_epochs=300, lr=3e-3, patience=30, seed=0)
SINGLE_STREAM_MAX = 0.35
FUSED_MIN = 0.95
MIN_GAP = 0.40


def record(n, name, ok, detail=""):
    RESULTS.append(f"[{n}] {'PASS' if ok else 'FAIL'}  {name}  {detail}".rstrip())
    assert ok, f"criterion {n} ({name}) failed: {detail}"


# 1 --------------------------------------------------------------------------

def test_1_gradient_correctness():
    start = time.perf_counter()
    results = run_gradcheck(seed=0, tolerance=1e-4)
    elapsed = time.perf_counter() - start
    worst = max(results, key=lambda r: r.max_rel_error)
    failed = [r.component for r in results if not r.passed]
    components = {r.component for r in results}
    expected = {f"conv1d_k{k}" for k in (2, 3, 4, 5)} | {
        "batchnorm_train", "relu", "affine", "softmax_ce", "res_inc"} | {
        f"fusion_{op.value}" for op in FusionOp}
    models = {(v, d) for v in ArchVariant for d in FusionDirection
              if f"model_{v.value}_{d.value}_average" in components}
    ok = (not failed and expected <= components and len(models) == 9 and elapsed < 60)
    record(1, "gradient correctness",
           ok, f"{len(results)} checks, worst {worst.component}={worst.max_rel_error:.2e}, "
               f"{elapsed:.1f}s, failed={failed}")


# 2 --------------------------------------------------------------------------

def test_2_shape_and_normalization():
    rng = np.random.default_rng(2)
    cases = 0
    worst_two, worst_one, worst_soft = 0.0, 0.0, 0.0
    shapes_ok = True
    for i in range(200):
        d = [4, 8, 16][i % 3]
        B, N = int(rng.integers(1, 4)), int(rng.integers(1, 8))
        block = ResIncBlock(d, np.random.default_rng(i))
        mode = "train" if B * N >= 2 else "eval"
        shapes_ok &= block.forward(rng.normal(size=(B, N, d)), mode).shape == (B, N, d)

        C = int(rng.integers(2, 6))
        variant = list(ArchVariant)[i % 3]
        cfg = ModelConfig(d=d, num_classes=C, num_segments=N, variant=variant,
                          fusion_op=list(FusionOp)[(i // 3) % 3],
                          direction=list(FusionDirection)[(i // 9) % 3])
        m = StfnModel(cfg, seed=i)
        scale = float(rng.uniform(0.1, 10))
        s = m.forward(scale * rng.normal(size=(B, N, d)), scale * rng.normal(size=(B, N, d)), mode)
        dev = np.abs(s.sum(axis=1) - (2 if cfg.two_heads else 1)).max()
        if cfg.two_heads:
            worst_two = max(worst_two, dev)
        else:
            worst_one = max(worst_one, dev)
        p = softmax(rng.uniform(-20, 20, (B, C)))
        worst_soft = max(worst_soft, np.abs(p.sum(axis=1) - 1).max())
        cases += 1
    for seed in range(2):  # full-width blocks, sampled
        rng2 = np.random.default_rng(100 + seed)
        block = ResIncBlock(2048, rng2)
        shapes_ok &= block.forward(rng2.normal(size=(2, 3, 2048))).shape == (2, 3, 2048)
        cases += 1
    ok = shapes_ok and worst_two <= 1e-9 and worst_one <= 1e-9 and worst_soft <= 1e-12
    record(2, "shape and normalization invariants", ok,
           f"{cases} cases, two-head dev {worst_two:.1e}, concat dev {worst_one:.1e}, "
           f"softmax dev {worst_soft:.1e}")


# 3 --------------------------------------------------------------------------

def test_3_fusion_algebra():
    rng = np.random.default_rng(3)
    ok = True
    checks = 0
    for op, direction in itertools.product(FusionOp, FusionDirection):
        for _ in range(20):
            a, b = rng.normal(size=(2, 3, 8)), rng.normal(size=(2, 3, 8))
            ok &= np.array_equal(fuse(op, a, b), fuse(op, b, a))
            if op is FusionOp.MULTIPLY:
                ok &= np.array_equal(fuse(op, a, np.ones_like(a)), a)
            else:
                ok &= np.array_equal(fuse(op, a, a), a)
            ia, im = wire(direction, op, a, b)
            fused = fuse(op, a, b)
            if direction is FusionDirection.BIDIRECTIONAL:
                ok &= np.array_equal(ia, fused) and np.array_equal(im, fused)
                ok &= ia is not im
            elif direction is FusionDirection.M_TO_A:
                ok &= im.tobytes() == b.tobytes() and np.array_equal(ia, fused)
            else:
                ok &= ia.tobytes() == a.tobytes() and np.array_equal(im, fused)
            checks += 1
    record(3, "fusion algebra", bool(ok), f"{checks} cases over 9 operator x direction pairs")


# 4 --------------------------------------------------------------------------

def test_4_complementary_modalities():
    start = time.perf_counter()
    ds = generate(SYNTH)
    assert [len(ds[s]) for s in ("train", "test")] == [200, 100]
    centroid = max(centroid_accuracy(ds["train"], ds["test"], m, 4)
                   for m in ("appearance", "motion"))
    eval_sampler = SegmentSampler(SYNTH.num_segments)

    single = StfnModel(ModelConfig(d=16, num_classes=4, num_segments=5, variant="concat_first"),
                       seed=SYNTH_TRAIN.seed)
    blind = {k: zero_modality(v, "motion") for k, v in ds.items()}
    train(single, blind["train"], blind["val"], SYNTH_TRAIN)
    single_acc = evaluate(single, blind["test"], eval_sampler)

    fused = StfnModel(ModelConfig(d=16, num_classes=4, num_segments=5), seed=SYNTH_TRAIN.seed)
    train(fused, ds["train"], ds["val"], SYNTH_TRAIN)
    fused_acc = evaluate(fused, ds["test"], eval_sampler)
    elapsed = time.perf_counter() - start
    ok = (single_acc <= SINGLE_STREAM_MAX and fused_acc >= FUSED_MIN
          and fused_acc - single_acc >= MIN_GAP and elapsed < 600)
    record(4, "complementary-modality experiment", ok,
           f"single-stream {single_acc:.3f} (<= {SINGLE_STREAM_MAX}), fused {fused_acc:.3f} "
           f"(>= {FUSED_MIN}), centroid oracle {centroid:.3f}, {elapsed:.0f}s")


# 5 --------------------------------------------------------------------------

def test_5_protocol_fidelity():
    s = PlateauSchedule(1e-4, decay_factor=0.1, floor_lr=1e-7, patience=3)
    trace = [s.step(0.5) for _ in range(40)]
    decays = [b / a for a, b in zip(trace, trace[1:]) if b != a]
    schedule_ok = (trace[-1] == 1e-7 and all(abs(r - 0.1) < 1e-12 for r in decays)
                   and len(decays) == 3 and min(trace) >= 1e-7)

    sampler = SegmentSampler(1, seed=5)
    sampling_ok = True
    for N in range(1, 10):
        sampler.num_segments = N
        for T in range(N, 51):
            bounds = segment_bounds(T, N)
            idx = sampler.sample_train(T)
            sampling_ok &= len(idx) == N and all(lo <= i < hi for i, (lo, hi) in zip(idx, bounds))

    class Counting:
        def __init__(self):
            self.batches = []

        def forward(self, fa, fm, mode):
            self.batches.append(fa.shape[0])
            out = np.zeros((fa.shape[0], 2))
            out[::2, 0] = 1  # alternating views
            out[:, 1] = 1 - out[:, 0]
            return out

    m = Counting()
    rng = np.random.default_rng(0)
    v = Video(rng.normal(size=(30, 4)), rng.normal(size=(30, 4)), 0)
    lists = SegmentSampler(5).sample_eval(30)
    scores = video_scores(m, v, SegmentSampler(5))
    eval_ok = len(lists) == 5 and m.batches == [5] and np.allclose(scores, [0.6, 0.4])
    record(5, "protocol fidelity", schedule_ok and sampling_ok and eval_ok,
           f"lr trace {trace[0]:g}->{trace[-1]:g} in {len(decays)} x0.1 steps; "
           f"sampling bounds ok={sampling_ok}; eval views={len(lists)}, "
           f"averaged scores {np.round(scores, 3).tolist()}")


# 6 --------------------------------------------------------------------------

def test_6_determinism_and_persistence(tmp_path):
    spec = SyntheticSpec(num_classes=3, d=8, frames=12, num_segments=4, train_per_class=4,
                         val_per_class=2, test_per_class=2, seed=6)
    cfg = TrainConfig(max_epochs=5, lr=1e-3, batch_size=4, seed=6)
    reports, models = [], []
    for _ in range(2):
        ds = generate(spec)
        m = StfnModel(ModelConfig(d=8, num_classes=3, num_segments=4), seed=6)
        reports.append(train(m, ds["train"], ds["val"], cfg).to_text())
        models.append(m)
    same_report = reports[0] == reports[1]

    path = tmp_path / "m.stfn"
    data_io.save_checkpoint(models[0], path)
    loaded = data_io.load_checkpoint(path)
    ds = generate(spec)
    sampler = SegmentSampler(4)
    same_preds = all(np.array_equal(video_scores(models[0], v, sampler), video_scores(loaded, v, sampler))
                     for v in ds["test"])
    data_io.save_checkpoint(loaded, tmp_path / "again.stfn")
    ckpt_bytes = (tmp_path / "again.stfn").read_bytes() == path.read_bytes()

    manifest = write_dataset(spec, tmp_path / "data")
    feats_ok = True
    for f in sorted((tmp_path / "data" / "features").iterdir()):
        raw = f.read_bytes()
        dec = data_io.decode_feature_file(raw)
        feats_ok &= data_io.encode_feature_file(dec.modality, dec.label, dec.features) == raw
    ok = same_report and same_preds and ckpt_bytes and feats_ok and manifest.exists()
    record(6, "determinism and persistence", ok,
           f"reports equal={same_report}, predictions equal={same_preds}, "
           f"checkpoint bytes equal={ckpt_bytes}, feature files round-trip={feats_ok}")


# 7 --------------------------------------------------------------------------

def test_7_overfit_sanity():
    ds = generate(SyntheticSpec(num_classes=4, d=16, frames=20, num_segments=5,
                                train_per_class=1, val_per_class=0, test_per_class=0,
                                noise_std=0.3, seed=7))
    videos = ds["train"]
    cfg = TrainConfig(max_epochs=200, lr=1e-2, patience=1000, seed=7)
    worst = (0.0, None)
    for variant, op, direction in itertools.product(ArchVariant, FusionOp, FusionDirection):
        m = StfnModel(ModelConfig(d=16, num_classes=4, num_segments=5, variant=variant,
                                  fusion_op=op, direction=direction), seed=7)
        final = train(m, videos, videos, cfg).losses[-1]
        if final >= worst[0]:
            worst = (final, f"{variant}/{op}/{direction}")
    record(7, "overfit sanity", worst[0] < 1e-2,
           f"27 configurations, worst final train loss {worst[0]:.2e} ({worst[1]})")


if __name__ == "__main__":
    import sys
    sys.exit(pytest.main([__file__, "-q"]))
