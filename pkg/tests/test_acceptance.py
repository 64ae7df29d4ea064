"""End-to-end acceptance suite: one test per release gate.

These are the binding checks for the library: losslessness, gradient
correctness, the drop-in shape contract, degeneracy to known baselines,
fusion algebra, bitwise determinism with checkpoint resume, a directional
full-scale ablation, keypoint task sanity, and byte-exact data ingestion.
The two training gates are long (tens of minutes); everything else is fast.
"""

import csv
import json
import os
import time

import numpy as np
import pytest

from mgil import cli, ops
from mgil.blocks import (
    DOWNSAMPLER_KINDS,
    MgilConfig,
    MgilDownsampler,
    Mgaf,
    Flie,
    SpdConvDownsampler,
    make_downsampler,
    sct_forward,
    sct_inverse,
)
from mgil.checkpoint import load_checkpoint
from mgil.data import (
    CIFAR_RECORD_BYTES,
    load_cifar10,
    lowres_transform,
    synth_keypoint_dataset,
    write_synthetic_cifar,
)
from mgil.gradcheck import TOLERANCE, run_suite
from mgil.nets import NetSpec, build_net
from mgil.rng import derive_seed, derived_generator
from mgil.tensor import Tensor
from mgil.training import OptimConfig, ablate, summarize, train


def copy_state(src, dst):
    src_tensors = dict(src.named_tensors())
    for name, t in dst.named_tensors():
        t.data = src_tensors[name].data.copy()


def test_losslessness_1000_roundtrips():
    """Gate 1: the space-to-channel transform is a bitwise-invertible
    permutation on 1000 random tensors, in under 10 seconds."""
    rng = derived_generator(0, "acc-lossless")
    t0 = time.perf_counter()
    for _ in range(1000):
        c = int(rng.integers(1, 9))
        h = 2 * int(rng.integers(1, 17))
        w = 2 * int(rng.integers(1, 17))
        x = Tensor(rng.uniform(-10, 10, (1, c, h, w)).astype(np.float32))
        y = sct_forward(x)
        assert np.array_equal(np.sort(y.data.reshape(-1)),
                              np.sort(x.data.reshape(-1)))
        assert np.array_equal(sct_inverse(y).data, x.data)
    assert time.perf_counter() - t0 < 10.0


def test_gradient_suite_passes_under_two_minutes(capsys):
    """Gate 2: the gradcheck command exits 0 -- every differentiable op and
    the composed downsampler pass finite-difference checks below 1e-4."""
    t0 = time.perf_counter()
    assert cli.cmd_gradcheck() == cli.EXIT_OK
    assert time.perf_counter() - t0 < 120.0
    out = capsys.readouterr().out
    assert "FAIL" not in out and "mgil_forward" in out


def test_drop_in_shape_contract():
    """Gate 3: all four downsampler kinds halve H and W and keep C on 100
    random even-sized inputs, and both reference nets forward with each."""
    rng = derived_generator(0, "acc-dropin")
    for i in range(100):
        c = int(rng.integers(1, 9))
        h = 2 * int(rng.integers(2, 17))
        w = 2 * int(rng.integers(2, 17))
        x = Tensor(rng.uniform(-1, 1, (2, c, h, w)).astype(np.float32))
        shapes = set()
        for kind in DOWNSAMPLER_KINDS:
            ds = make_downsampler(kind, c, c, derived_generator(1, kind, i))
            shapes.add(ds.forward(Tensor(x.data.copy())).shape)
        assert shapes == {(2, c, h // 2, w // 2)}, (c, h, w)

    batch = Tensor(rng.uniform(0, 1, (2, 3, 16, 16)).astype(np.float32))
    for kind in DOWNSAMPLER_KINDS:
        mgil = MgilConfig(in_channels=16) if kind == "mgil" else None
        cls_spec = NetSpec(task="classify", base_width=16, stage_blocks=(1, 1),
                           downsampler=kind, mgil=mgil, input_size=16)
        assert build_net(cls_spec, 0).forward(
            Tensor(batch.data.copy())).shape == (2, 10)
        kp_spec = NetSpec(task="keypoint", base_width=16, stage_blocks=(1, 1, 1),
                          downsampler=kind, mgil=mgil, num_keypoints=1,
                          input_size=16)
        assert build_net(kp_spec, 0).forward(
            Tensor(batch.data.copy())).shape == (2, 1, 4, 4)


def test_depth1_fine_branch_is_spd_conv_bitwise():
    """Gate 4: the fine-grained branch at depth 1 degenerates to an
    independently built space-to-depth + conv baseline, bitwise, on 100
    random inputs under shared weights."""
    rng = derived_generator(0, "acc-spd")
    for i in range(100):
        c = int(rng.integers(1, 7))
        h = 2 * int(rng.integers(2, 9))
        flie = Flie(c, c, 1, derived_generator(1, "flie", i))
        spd = SpdConvDownsampler(c, c, derived_generator(2, "spd", i))
        copy_state(flie.lie.layers[0], spd.layer)
        x = Tensor(rng.uniform(-2, 2, (2, c, h, h)).astype(np.float32))
        a = flie.forward(x, training=True)
        b = spd.forward(Tensor(x.data.copy()), training=True)
        assert np.array_equal(a.data, b.data), i


def test_fusion_algebra_1000_draws():
    """Gate 5: fusion weights are a valid two-way convex combination on 1000
    random parameter/input draws."""
    rng = derived_generator(0, "acc-mgaf")
    for i in range(1000):
        c = int(rng.integers(1, 9))
        mgaf = Mgaf(c, derived_generator(1, "mgaf", i))
        shape = (int(rng.integers(1, 4)), c, 3, 3)
        f0 = Tensor(rng.uniform(-3, 3, shape).astype(np.float32))
        f1 = Tensor(rng.uniform(-3, 3, shape).astype(np.float32))
        out, lam = mgaf.forward(f0, f1, return_weights=True)
        assert np.all(np.abs(lam.data.sum(axis=1) - 1.0) < 1e-6)
        assert np.all(lam.data > 0.0) and np.all(lam.data < 1.0)
        assert np.all(out.data >= np.minimum(f0.data, f1.data) - 1e-5)
        assert np.all(out.data <= np.maximum(f0.data, f1.data) + 1e-5)
        same = mgaf.forward(f0, Tensor(f0.data.copy()))
        assert np.all(np.abs(same.data - f0.data) < 1e-6)


def test_dilation_one_reduces_to_standard_conv():
    """Gate 6: rate-1 dilated convolution is bitwise the standard
    convolution under shared weights, 100 random cases."""
    rng = derived_generator(0, "acc-dilation")
    for i in range(100):
        n, cin, cout = (int(rng.integers(1, 4)) for _ in range(3))
        h = int(rng.integers(5, 12))
        stride = int(rng.integers(1, 3))
        pad = int(rng.integers(0, 3))
        x = Tensor(rng.uniform(-1, 1, (n, cin, h, h)).astype(np.float32))
        w = Tensor(rng.uniform(-1, 1, (cout, cin, 3, 3)).astype(np.float32))
        b = Tensor(rng.uniform(-1, 1, cout).astype(np.float32))
        dilated = ops.conv2d(x, w, b, stride=stride, padding=pad, dilation=1)
        standard = ops.conv2d(x, w, b, stride=stride, padding=pad)
        assert np.array_equal(dilated.data, standard.data), i


def test_determinism_and_resume(tmp_path):
    """Gate 7: identical seeds give bitwise-identical per-epoch losses, and
    a mid-run checkpoint resume reproduces the uninterrupted trajectory."""
    data_dir = str(tmp_path / "data")
    write_synthetic_cifar(data_dir, 96, 32, seed=0)

    def config(out_dir, epochs):
        cfg = {
            "task": "classify", "seed": 11, "epochs": epochs,
            "output_dir": out_dir,
            "data": {"kind": "synthetic_cifar", "path": data_dir,
                     "lowres_factor": 2, "train_count": 96, "test_count": 32},
            "net": {"base_width": 8, "stage_blocks": [1, 1]},
            "downsampler": "mgil",
            "mgil": {"lie_depth_flie": 1, "lie_depth_cii": 1},
            "optim": {"batch_size": 32},
        }
        path = tmp_path / f"{os.path.basename(out_dir)}.json"
        path.write_text(json.dumps(cfg))
        return str(path)

    def losses(out_dir):
        with open(os.path.join(out_dir, "metrics.csv"), newline="") as fh:
            return [row[1] for row in list(csv.reader(fh))[1:]]

    run_a = str(tmp_path / "a")
    run_b = str(tmp_path / "b")
    assert cli.main(["train", "--config", config(run_a, 4)]) == cli.EXIT_OK
    assert cli.main(["train", "--config", config(run_b, 4)]) == cli.EXIT_OK
    assert losses(run_a) == losses(run_b)
    ckpt_a = load_checkpoint(os.path.join(run_a, "checkpoint_epoch_004.bin"))
    ckpt_b = load_checkpoint(os.path.join(run_b, "checkpoint_epoch_004.bin"))
    for name in ckpt_a["model_tensors"]:
        assert np.array_equal(ckpt_a["model_tensors"][name],
                              ckpt_b["model_tensors"][name]), name

    # simulate an interruption after epoch 2: resume from run A's mid-run
    # checkpoint into a fresh directory and finish the remaining epochs
    run_c = str(tmp_path / "c")
    assert cli.main(["train", "--config", config(run_c, 4), "--resume",
                     os.path.join(run_a, "checkpoint_epoch_002.bin")]) == cli.EXIT_OK
    assert losses(run_c) == losses(run_a)[2:]
    ckpt_c = load_checkpoint(os.path.join(run_c, "checkpoint_epoch_004.bin"))
    assert ckpt_c["rng_state"] == ckpt_a["rng_state"]
    assert ckpt_c["optim_steps"] == ckpt_a["optim_steps"]
    for name in ckpt_a["model_tensors"]:
        assert np.array_equal(ckpt_a["model_tensors"][name],
                              ckpt_c["model_tensors"][name]), name
    for name in ckpt_a["optim_tensors"]:
        assert np.array_equal(ckpt_a["optim_tensors"][name],
                              ckpt_c["optim_tensors"][name]), name


def test_directional_ablation_low_res_classification(tmp_path):
    """Gate 8 (long, ~40 min): on the 16x16 low-resolution classification
    task (5000 train / 2000 test, 30 epochs, seeds 0/1/2), the mean top-1 of
    the adaptive multi-granular downsampler exceeds the strided-conv
    baseline, and adaptive fusion is >= additive fusion on the mean.  A
    trend check: no fixed margin."""
    data_dir = str(tmp_path / "data")
    write_synthetic_cifar(data_dir, 5000, 2000, seed=0)
    train_set = [lowres_transform(s, 2) for s in load_cifar10(data_dir, "train")]
    eval_set = [lowres_transform(s, 2) for s in load_cifar10(data_dir, "test")]

    base = NetSpec(task="classify", base_width=8, stage_blocks=(1, 1, 1),
                   downsampler="strided_conv", num_classes=10, input_size=16)
    entries = [
        {"name": "strided", "downsampler": "strided_conv", "mgil": None},
        {"name": "additive", "downsampler": "mgil",
         "mgil": MgilConfig(in_channels=8, fusion="additive")},
        {"name": "adaptive", "downsampler": "mgil",
         "mgil": MgilConfig(in_channels=8, fusion="adaptive")},
    ]
    t0 = time.perf_counter()
    rows = ablate(base, entries, [0, 1, 2], train_set, eval_set,
                  optim=OptimConfig(), epochs=30)
    elapsed = time.perf_counter() - t0
    means = {agg["name"]: agg["mean"] for agg in summarize(rows)}
    detail = {r.name: [] for r in rows}
    for r in rows:
        detail[r.name].append(round(r.metric, 4))
    assert means["adaptive"] > means["strided"], (means, detail)
    assert means["adaptive"] >= means["additive"], (means, detail)
    assert elapsed < 45 * 60


def test_keypoint_pck_regression_bound():
    """Gate 9 (long, ~4 min): the heatmap net with multi-granular
    downsampling reaches PCK@10% >= 0.9 on the synthetic blob task (2000
    train samples, 20 epochs, seed 42).  The pinned oracle run scored
    0.916."""
    train_set = synth_keypoint_dataset(2000, 16, derive_seed(42, "kp-train"))
    eval_set = synth_keypoint_dataset(500, 16, derive_seed(42, "kp-test"))
    spec = NetSpec(task="keypoint", base_width=16, stage_blocks=(1, 1, 1),
                   downsampler="mgil", mgil=MgilConfig(in_channels=16),
                   num_keypoints=1, input_size=16)
    net = build_net(spec, 42)
    record = train(net, train_set, eval_set, task="keypoint",
                   optim=OptimConfig(lr=0.05), epochs=20, seed=42)
    assert record.eval_metrics[-1] >= 0.9, record.eval_metrics


def test_cifar_ingestion_against_raw_bytes(tmp_path):
    """Gate 10: loaded record count and the label byte of record 0 match a
    raw byte-level scan of the binary files."""
    data_dir = str(tmp_path / "data")
    write_synthetic_cifar(data_dir, 120, 40, seed=3)
    for filename, split in [("data_batch_1.bin", "train"),
                            ("test_batch.bin", "test")]:
        raw = open(os.path.join(data_dir, filename), "rb").read()
        assert len(raw) % CIFAR_RECORD_BYTES == 0
        samples = load_cifar10(data_dir, split)
        assert len(samples) == len(raw) // CIFAR_RECORD_BYTES
        assert samples[0].label == raw[0]
