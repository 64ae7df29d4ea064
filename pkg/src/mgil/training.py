"""Deterministic desk-scale training: optimizers, losses, metrics, and the
ablation driver.

Everything is a pure function of (seed, config, data) at thread count 1:
shuffling comes from the checkpointable xoshiro256** generator, parameter
init from seed-derived streams, and no other source of randomness exists.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import ops
from .blocks import MgilConfig
from .data import Sample
from .nets import HeatmapNet, NetSpec, build_net, decode_keypoints
from .rng import Xoshiro256StarStar
from .tensor import Module, Parameter, Tape, Tensor


class TrainingDiverged(RuntimeError):
    def __init__(self, step: int):
        super().__init__(f"loss became non-finite at step {step}")
        self.step = step


@dataclass
class OptimConfig:
    kind: str = "sgd"  # "sgd" | "adam"
    lr: float = 0.05
    momentum: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 64
    schedule: str = "cosine"  # "cosine" | "constant"

    def __post_init__(self):
        if self.lr < 0:
            raise ValueError("lr must be >= 0")
        if self.kind not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.kind!r}")
        if self.schedule not in ("cosine", "constant"):
            raise ValueError(f"unknown schedule {self.schedule!r}")


class Optimizer:
    """Holds per-parameter moment buffers keyed by parameter name."""

    def __init__(self, named_params: list[tuple[str, Parameter]], config: OptimConfig):
        self.config = config
        self.params = named_params
        self.step_count = 0
        self.buffers: dict[str, dict[str, np.ndarray]] = {}
        for name, p in named_params:
            if config.kind == "sgd":
                self.buffers[name] = {"m": np.zeros_like(p.data)}
            else:
                self.buffers[name] = {"m": np.zeros_like(p.data),
                                      "v": np.zeros_like(p.data)}

    def step(self, lr: float) -> None:
        cfg = self.config
        self.step_count += 1
        for name, p in self.params:
            g = p.grad
            if g is None:
                continue
            buf = self.buffers[name]
            if cfg.kind == "sgd":
                buf["m"] = cfg.momentum * buf["m"] + g
                p.data -= lr * buf["m"]
            else:
                buf["m"] = cfg.beta1 * buf["m"] + (1 - cfg.beta1) * g
                buf["v"] = cfg.beta2 * buf["v"] + (1 - cfg.beta2) * g * g
                m_hat = buf["m"] / (1 - cfg.beta1 ** self.step_count)
                v_hat = buf["v"] / (1 - cfg.beta2 ** self.step_count)
                p.data -= lr * m_hat / (np.sqrt(v_hat) + cfg.eps)

    def state_tensors(self) -> list[tuple[str, np.ndarray]]:
        out = []
        for name in sorted(self.buffers):
            for key in sorted(self.buffers[name]):
                out.append((f"{name}#{key}", self.buffers[name][key]))
        return out

    def load_state(self, tensors: dict[str, np.ndarray], step_count: int) -> None:
        for name in self.buffers:
            for key in self.buffers[name]:
                self.buffers[name][key] = tensors[f"{name}#{key}"].copy()
        self.step_count = step_count


@dataclass
class RunRecord:
    seed: int
    config_hash: str
    train_losses: list[float] = field(default_factory=list)
    eval_metrics: list[float] = field(default_factory=list)
    seconds: float = 0.0

    @property
    def final_metric(self) -> float:
        return self.eval_metrics[-1] if self.eval_metrics else float("nan")


def _stack_batch(samples: list[Sample], task: str):
    x = np.stack([s.image for s in samples]).astype(np.float32)
    if task == "classify":
        y = np.array([s.label for s in samples], dtype=np.int64)
    else:
        y = np.stack([s.heatmap for s in samples]).astype(np.float32)
    return x, y


def _epoch_lr(cfg: OptimConfig, epoch: int, total_epochs: int) -> float:
    if cfg.schedule == "constant" or total_epochs <= 1:
        return cfg.lr
    return cfg.lr * 0.5 * (1.0 + math.cos(math.pi * epoch / total_epochs))


def evaluate(net: Module, samples: list[Sample], metric: str, *,
             batch_size: int = 256, pck_threshold: float = 0.10) -> float:
    """Top-1 accuracy ("top1") or keypoint correctness within a fraction of
    the image diagonal ("pck").  Runs the net in eval mode."""
    if not samples:
        raise ValueError("cannot evaluate on an empty dataset")
    if metric not in ("top1", "pck"):
        raise ValueError(f"unknown metric {metric!r}")
    correct = 0
    for start in range(0, len(samples), batch_size):
        chunk = samples[start:start + batch_size]
        x = Tensor(np.stack([s.image for s in chunk]).astype(np.float32))
        out = net.forward(x, tape=None, training=False)
        if metric == "top1":
            pred = out.data.argmax(axis=1)
            labels = np.array([s.label for s in chunk])
            correct += int((pred == labels).sum())
        else:
            stride = getattr(net, "output_stride", 1)
            for i, s in enumerate(chunk):
                (px, py) = decode_keypoints(out.data[i])[0]
                gx, gy = s.keypoint
                _, h, w = s.image.shape
                diag = math.hypot(h, w)
                dist = math.hypot(px * stride - gx, py * stride - gy)
                if dist <= pck_threshold * diag:
                    correct += 1
    return correct / len(samples)


def train(net: Module, train_samples: list[Sample], eval_samples: list[Sample],
          *, task: str, optim: OptimConfig, epochs: int, seed: int,
          config_hash: str = "", start_epoch: int = 0,
          optimizer: Optimizer | None = None,
          shuffle_rng: Xoshiro256StarStar | None = None,
          record: RunRecord | None = None,
          epoch_callback=None) -> RunRecord:
    """Deterministic training loop.

    ``start_epoch``/``optimizer``/``shuffle_rng``/``record`` allow exact
    resume from a checkpoint; fresh runs leave them at their defaults.
    """
    metric = "top1" if task == "classify" else "pck"
    if optimizer is None:
        optimizer = Optimizer(list(net.named_parameters()), optim)
    if shuffle_rng is None:
        shuffle_rng = Xoshiro256StarStar(seed)
    if record is None:
        record = RunRecord(seed=seed, config_hash=config_hash)

    x_all, y_all = _stack_batch(train_samples, task)
    n = len(train_samples)
    t0 = time.perf_counter()
    step = start_epoch * math.ceil(n / optim.batch_size)
    for epoch in range(start_epoch, epochs):
        lr = _epoch_lr(optim, epoch, epochs)
        perm = shuffle_rng.permutation(n)
        epoch_losses = []
        for start in range(0, n, optim.batch_size):
            idx = perm[start:start + optim.batch_size]
            x = Tensor(x_all[idx])
            tape = Tape()
            out = net.forward(x, tape, training=True)
            if task == "classify":
                loss = ops.cross_entropy_loss(out, y_all[idx], tape)
            else:
                loss = ops.mse_loss(out, y_all[idx], tape)
            if not np.isfinite(loss.data):
                raise TrainingDiverged(step)
            tape.backward(loss)
            optimizer.step(lr)
            net.zero_grad()
            epoch_losses.append(float(loss.data))
            step += 1
        record.train_losses.append(float(np.mean(epoch_losses)))
        record.eval_metrics.append(evaluate(net, eval_samples, metric))
        record.seconds = time.perf_counter() - t0
        if epoch_callback is not None:
            epoch_callback(epoch, net, optimizer, shuffle_rng, record)
    return record


@dataclass
class AblationRow:
    name: str
    downsampler: str
    flie_depth: int | None
    cii_depth: int | None
    fusion: str | None
    seed: int
    metric: float


def component_grid(channels: int) -> list[dict]:
    """The component on/off rows: baseline, +fine branch, +coarse branch,
    +adaptive fusion."""
    return [
        {"name": "baseline", "downsampler": "strided_conv", "mgil": None},
        {"name": "+flie", "downsampler": "mgil",
         "mgil": MgilConfig(in_channels=channels, cii_enabled=False)},
        {"name": "+flie+cii", "downsampler": "mgil",
         "mgil": MgilConfig(in_channels=channels, fusion="additive")},
        {"name": "+flie+cii+mgaf", "downsampler": "mgil",
         "mgil": MgilConfig(in_channels=channels, fusion="adaptive")},
    ]


def ablate(base_spec: NetSpec, entries: list[dict], seeds: list[int],
           train_samples: list[Sample], eval_samples: list[Sample], *,
           optim: OptimConfig, epochs: int,
           progress=None) -> list[AblationRow]:
    """Train one net per (entry, seed) and collect final metrics."""
    rows = []
    for entry in entries:
        mgil = entry.get("mgil")
        spec = NetSpec(
            task=base_spec.task, in_channels=base_spec.in_channels,
            base_width=base_spec.base_width, stage_blocks=base_spec.stage_blocks,
            downsampler=entry["downsampler"], mgil=mgil,
            num_classes=base_spec.num_classes,
            num_keypoints=base_spec.num_keypoints,
            input_size=base_spec.input_size,
        )
        for seed in seeds:
            net = build_net(spec, seed)
            rec = train(net, train_samples, eval_samples, task=spec.task,
                        optim=optim, epochs=epochs, seed=seed)
            rows.append(AblationRow(
                name=entry.get("name", entry["downsampler"]),
                downsampler=entry["downsampler"],
                flie_depth=mgil.lie_depth_flie if mgil else None,
                cii_depth=(mgil.lie_depth_cii if mgil and mgil.cii_enabled else None),
                fusion=(mgil.fusion if mgil and mgil.cii_enabled else None),
                seed=seed, metric=rec.final_metric,
            ))
            if progress is not None:
                progress(rows[-1])
    return rows


def summarize(rows: list[AblationRow]) -> list[dict]:
    """Per-entry mean and std of the metric over seeds, in entry order."""
    order: list[str] = []
    grouped: dict[str, list[float]] = {}
    for row in rows:
        if row.name not in grouped:
            grouped[row.name] = []
            order.append(row.name)
        grouped[row.name].append(row.metric)
    return [
        {"name": name,
         "mean": float(np.mean(grouped[name])),
         "std": float(np.std(grouped[name])),
         "n": len(grouped[name])}
        for name in order
    ]
