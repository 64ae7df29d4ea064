"""Small task networks with pluggable downsampling stages.

Two reference nets: a toy classifier (3 stages, global-pool head) and a toy
heatmap regressor (2 downsamplers, stride-4 keypoint head).  Any of the four
downsampler kinds drops into the stage transitions without changing the rest
of the architecture.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import ops
from .blocks import Conv2d, ConvBnRelu, MgilConfig, he_uniform, make_downsampler
from .rng import derived_generator
from .tensor import ContractError, Module, Parameter, Tape, Tensor


@dataclass
class NetSpec:
    task: str = "classify"  # "classify" | "keypoint"
    in_channels: int = 3
    base_width: int = 16
    stage_blocks: tuple[int, ...] = (2, 2, 2)
    downsampler: str = "strided_conv"
    mgil: MgilConfig | None = None
    num_classes: int = 10
    num_keypoints: int = 1
    input_size: int = 16

    def __post_init__(self):
        self.stage_blocks = tuple(self.stage_blocks)
        if self.task not in ("classify", "keypoint"):
            raise ContractError(f"unknown task {self.task!r}")
        if self.task == "keypoint" and len(self.stage_blocks) != 3:
            raise ContractError("keypoint net uses 3 stages (2 downsamplers)")
        n_down = len(self.stage_blocks) - 1
        if self.input_size % (2 ** n_down):
            raise ContractError(
                f"input size {self.input_size} not divisible by 2^{n_down}"
            )


class Stage(Module):
    def __init__(self, width: int, n_blocks: int, rng: np.random.Generator):
        self.blocks = [ConvBnRelu(width, width, 3, rng, padding=1)
                       for _ in range(n_blocks)]

    def forward(self, x: Tensor, tape: Tape | None = None, *, training: bool = False) -> Tensor:
        for block in self.blocks:
            x = block.forward(x, tape, training=training)
        return x


class ClassifierNet(Module):
    def __init__(self, spec: NetSpec, seed: int):
        w = spec.base_width
        self.spec = spec
        self.stem = ConvBnRelu(spec.in_channels, w, 3,
                               derived_generator(seed, "stem"), padding=1)
        self.stages = [Stage(w, n, derived_generator(seed, f"stage{i}"))
                       for i, n in enumerate(spec.stage_blocks)]
        self.downs = [make_downsampler(spec.downsampler, w, w,
                                       derived_generator(seed, f"down{i}"), spec.mgil)
                      for i in range(len(spec.stage_blocks) - 1)]
        head_rng = derived_generator(seed, "head")
        self.head_weight = Parameter(he_uniform(head_rng, (spec.num_classes, w), fan_in=w))
        self.head_bias = Parameter(np.zeros(spec.num_classes, dtype=np.float32))

    def forward(self, x: Tensor, tape: Tape | None = None, *, training: bool = False) -> Tensor:
        y = self.stem.forward(x, tape, training=training)
        for i, stage in enumerate(self.stages):
            y = stage.forward(y, tape, training=training)
            if i < len(self.downs):
                y = self.downs[i].forward(y, tape, training=training)
        pooled = ops.flatten_vec(ops.global_avg_pool(y, tape), tape)
        return ops.fully_connected(pooled, self.head_weight, self.head_bias, tape)


class HeatmapNet(Module):
    """Encoder with two downsamplers, then two non-strided conv layers as a
    decoder head; output stride 4."""

    output_stride = 4

    def __init__(self, spec: NetSpec, seed: int):
        w = spec.base_width
        self.spec = spec
        self.stem = ConvBnRelu(spec.in_channels, w, 3,
                               derived_generator(seed, "stem"), padding=1)
        self.stages = [Stage(w, n, derived_generator(seed, f"stage{i}"))
                       for i, n in enumerate(spec.stage_blocks)]
        self.downs = [make_downsampler(spec.downsampler, w, w,
                                       derived_generator(seed, f"down{i}"), spec.mgil)
                      for i in range(2)]
        head_rng = derived_generator(seed, "head")
        self.head_conv = ConvBnRelu(w, w, 3, head_rng, padding=1)
        self.head_out = Conv2d(w, spec.num_keypoints, 3, head_rng, padding=1)

    def forward(self, x: Tensor, tape: Tape | None = None, *, training: bool = False) -> Tensor:
        y = self.stem.forward(x, tape, training=training)
        for i, stage in enumerate(self.stages):
            y = stage.forward(y, tape, training=training)
            if i < len(self.downs):
                y = self.downs[i].forward(y, tape, training=training)
        y = self.head_conv.forward(y, tape, training=training)
        return self.head_out.forward(y, tape)


def build_net(spec: NetSpec, seed: int) -> Module:
    """Deterministic construction: same (spec, seed) gives bitwise-identical
    parameters; per-component RNG streams keep shared components identical
    across downsampler kinds."""
    if spec.task == "classify":
        return ClassifierNet(spec, seed)
    return HeatmapNet(spec, seed)


def decode_keypoints(heatmap: np.ndarray) -> list[tuple[int, int]]:
    """Argmax location (x, y) per keypoint channel; ties break to the lowest
    flat index."""
    if heatmap.ndim != 3:
        raise ContractError(f"expected (K, h, w) heatmap, got shape {heatmap.shape}")
    coords = []
    for k in range(heatmap.shape[0]):
        flat = int(np.argmax(heatmap[k]))
        y, x = divmod(flat, heatmap.shape[2])
        coords.append((x, y))
    return coords
