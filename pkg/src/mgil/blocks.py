"""Downsampling blocks: space-to-channel transform, non-strided conv stacks,
a multi-dilation coarse branch, adaptive fusion, and the composed
multi-granular block, plus the three comparison downsamplers.

Every block maps (N, C, H, W) -> (N, C', H/2, W/2) for even H, W, so any of
them can be swapped into a network wherever a strided convolution or pooling
layer would halve resolution.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import ops
from .tensor import Buffer, ContractError, Module, Parameter, Tape, Tensor, check_nchw


def he_uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    bound = math.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(np.float32)


class Conv2d(Module):
    """Learnable square-kernel convolution with stride/dilation/padding geometry."""

    def __init__(self, in_channels: int, out_channels: int, kernel_size: int,
                 rng: np.random.Generator, *, stride: int = 1, dilation: int = 1,
                 padding: int = 0):
        k = kernel_size
        self.stride = stride
        self.dilation = dilation
        self.padding = padding
        self.weight = Parameter(he_uniform(rng, (out_channels, in_channels, k, k),
                                           fan_in=in_channels * k * k))
        self.bias = Parameter(np.zeros(out_channels, dtype=np.float32))

    @property
    def in_channels(self) -> int:
        return self.weight.data.shape[1]

    @property
    def out_channels(self) -> int:
        return self.weight.data.shape[0]

    def forward(self, x: Tensor, tape: Tape | None = None) -> Tensor:
        return ops.conv2d(x, self.weight, self.bias, stride=self.stride,
                          dilation=self.dilation, padding=self.padding, tape=tape)


class BatchNorm2d(Module):
    def __init__(self, channels: int, *, eps: float = 1e-5, momentum: float = 0.1):
        self.eps = eps
        self.momentum = momentum
        self.gamma = Parameter(np.ones(channels, dtype=np.float32))
        self.beta = Parameter(np.zeros(channels, dtype=np.float32))
        self.running_mean = Buffer(np.zeros(channels, dtype=np.float32))
        self.running_var = Buffer(np.ones(channels, dtype=np.float32))

    def forward(self, x: Tensor, tape: Tape | None = None, *, training: bool = False) -> Tensor:
        return ops.batch_norm2d(x, self.gamma, self.beta, self.running_mean,
                                self.running_var, training=training,
                                momentum=self.momentum, eps=self.eps, tape=tape)


class ConvBnRelu(Module):
    """conv -> (batch norm) -> ReLU; the unit layer used throughout the blocks."""

    def __init__(self, in_channels: int, out_channels: int, kernel_size: int,
                 rng: np.random.Generator, *, stride: int = 1, dilation: int = 1,
                 padding: int = 0, normalize: bool = True):
        self.conv = Conv2d(in_channels, out_channels, kernel_size, rng,
                           stride=stride, dilation=dilation, padding=padding)
        self.norm = BatchNorm2d(out_channels) if normalize else None

    def forward(self, x: Tensor, tape: Tape | None = None, *, training: bool = False) -> Tensor:
        y = self.conv.forward(x, tape)
        if self.norm is not None:
            y = self.norm.forward(y, tape, training=training)
        return ops.relu(y, tape)


def sct_forward(x: Tensor, tape: Tape | None = None) -> Tensor:
    """Space-to-channel transform: rearrange each 2x2 spatial block into 4
    channel groups ordered by sampling offset (0,0), (1,0), (0,1), (1,1).

    A pure permutation of values: (N, C, H, W) -> (N, 4C, H/2, W/2).
    """
    check_nchw(x)
    n, c, h, w = x.data.shape
    if h % 2 or w % 2:
        raise ContractError(
            f"space-to-channel needs even H and W, got {h}x{w}; pad the input first"
        )
    parts = [x.data[:, :, 0::2, 0::2], x.data[:, :, 1::2, 0::2],
             x.data[:, :, 0::2, 1::2], x.data[:, :, 1::2, 1::2]]
    out = Tensor(np.concatenate(parts, axis=1))
    if tape is not None:
        def backward():
            g = out.grad
            if g is None:
                return
            dx = np.empty_like(x.data)
            dx[:, :, 0::2, 0::2] = g[:, 0 * c:1 * c]
            dx[:, :, 1::2, 0::2] = g[:, 1 * c:2 * c]
            dx[:, :, 0::2, 1::2] = g[:, 2 * c:3 * c]
            dx[:, :, 1::2, 1::2] = g[:, 3 * c:4 * c]
            x.accumulate_grad(dx)
        tape.record(backward)
    return out


def sct_inverse(x: Tensor, tape: Tape | None = None) -> Tensor:
    """Exact inverse permutation of :func:`sct_forward`."""
    check_nchw(x)
    n, c4, h, w = x.data.shape
    if c4 % 4:
        raise ContractError(f"channel count {c4} is not divisible by 4")
    c = c4 // 4
    out_data = np.empty((n, c, h * 2, w * 2), dtype=x.data.dtype)
    out_data[:, :, 0::2, 0::2] = x.data[:, 0 * c:1 * c]
    out_data[:, :, 1::2, 0::2] = x.data[:, 1 * c:2 * c]
    out_data[:, :, 0::2, 1::2] = x.data[:, 2 * c:3 * c]
    out_data[:, :, 1::2, 1::2] = x.data[:, 3 * c:4 * c]
    out = Tensor(out_data)
    if tape is not None:
        def backward():
            g = out.grad
            if g is None:
                return
            dx = np.concatenate([g[:, :, 0::2, 0::2], g[:, :, 1::2, 0::2],
                                 g[:, :, 0::2, 1::2], g[:, :, 1::2, 1::2]], axis=1)
            x.accumulate_grad(dx)
        tape.record(backward)
    return out


class LieBlock(Module):
    """Stack of non-strided conv->norm->ReLU layers; the first layer may
    reduce channels, the rest keep width.  Kernel 3, padding 1, so spatial
    size is preserved."""

    def __init__(self, in_channels: int, out_channels: int, depth: int,
                 rng: np.random.Generator, *, normalize: bool = True):
        if depth < 1:
            raise ContractError("LIE block needs at least one convolution")
        layers = []
        c = in_channels
        for _ in range(depth):
            layers.append(ConvBnRelu(c, out_channels, 3, rng, padding=1,
                                     normalize=normalize))
            c = out_channels
        self.layers = layers
        self._validate()

    def _validate(self) -> None:
        for layer in self.layers:
            if layer.conv.stride != 1 or layer.conv.dilation != 1:
                raise ContractError("LIE layers must be non-strided and undilated")

    def forward(self, x: Tensor, tape: Tape | None = None, *, training: bool = False) -> Tensor:
        y = x
        for layer in self.layers:
            y = layer.forward(y, tape, training=training)
        return y


class Flie(Module):
    """Fine branch: lossless space-to-channel rearrangement followed by a
    LIE stack mapping 4C -> C'.  Depth 1 reduces to SPD-Conv."""

    def __init__(self, in_channels: int, out_channels: int, depth: int,
                 rng: np.random.Generator, *, normalize: bool = True):
        self.lie = LieBlock(4 * in_channels, out_channels, depth, rng,
                            normalize=normalize)

    def forward(self, x: Tensor, tape: Tape | None = None, *, training: bool = False) -> Tensor:
        return self.lie.forward(sct_forward(x, tape), tape, training=training)


class Mrie(Module):
    """Coarse feature extractor: parallel 3x3 convolutions with different
    dilation rates, summed, then norm + ReLU.

    With ``stride=2`` (raw-input wiring) each branch halves resolution;
    padding equals the dilation rate so all branches agree on output size.
    """

    def __init__(self, in_channels: int, out_channels: int,
                 dilation_rates: tuple[int, ...], rng: np.random.Generator, *,
                 stride: int = 2, normalize: bool = True):
        if not dilation_rates:
            raise ContractError("at least one dilation rate is required")
        self.branches = [
            Conv2d(in_channels, out_channels, 3, rng, stride=stride,
                   dilation=d, padding=d)
            for d in dilation_rates
        ]
        self.norm = BatchNorm2d(out_channels) if normalize else None

    def forward(self, x: Tensor, tape: Tape | None = None, *, training: bool = False) -> Tensor:
        y = self.branches[0].forward(x, tape)
        for branch in self.branches[1:]:
            y = ops.add(y, branch.forward(x, tape), tape)
        if self.norm is not None:
            y = self.norm.forward(y, tape, training=training)
        return ops.relu(y, tape)


class Cii(Module):
    """Coarse branch: multi-dilation extractor optionally followed by a LIE
    stack (depth 0 skips it)."""

    def __init__(self, in_channels: int, out_channels: int, lie_depth: int,
                 dilation_rates: tuple[int, ...], rng: np.random.Generator, *,
                 stride: int = 2, normalize: bool = True):
        self.mrie = Mrie(in_channels, out_channels, dilation_rates, rng,
                         stride=stride, normalize=normalize)
        self.lie = (LieBlock(out_channels, out_channels, lie_depth, rng,
                             normalize=normalize) if lie_depth > 0 else None)

    def forward(self, x: Tensor, tape: Tape | None = None, *, training: bool = False) -> Tensor:
        y = self.mrie.forward(x, tape, training=training)
        if self.lie is not None:
            y = self.lie.forward(y, tape, training=training)
        return y


def eca_kernel_size(channels: int, gamma: float = 2.0, b: float = 1.0) -> int:
    """Adaptive 1D kernel size: nearest odd integer to |log2(C)/gamma + b/gamma|,
    never below 1.  Even candidates round up to the next odd integer."""
    t = int(abs(math.log2(channels) / gamma + b / gamma))
    k = t if t % 2 == 1 else t + 1
    return max(1, k)


class Mgaf(Module):
    """Adaptive fusion of two same-shape feature maps.

    Pools the channel-concatenated pair globally, runs a shared-kernel 1D
    convolution over the pooled channel vector, then ReLU and a 2-output FC
    layer; the softmax of those logits weights the convex combination of the
    two inputs, per sample.
    """

    def __init__(self, channels: int, rng: np.random.Generator):
        k = eca_kernel_size(2 * channels)
        self.kernel = Parameter(he_uniform(rng, (k,), fan_in=k))
        self.fc_weight = Parameter(he_uniform(rng, (2, 2 * channels), fan_in=2 * channels))
        self.fc_bias = Parameter(np.zeros(2, dtype=np.float32))

    def forward(self, f0: Tensor, f1: Tensor, tape: Tape | None = None, *,
                return_weights: bool = False):
        if f0.data.shape != f1.data.shape:
            raise ContractError(
                f"fusion inputs must match: {f0.data.shape} vs {f1.data.shape}"
            )
        pooled = ops.flatten_vec(ops.global_avg_pool(
            ops.concat_channels([f0, f1], tape), tape), tape)
        v = ops.relu(ops.conv1d_channels(pooled, self.kernel, tape), tape)
        alpha = ops.fully_connected(v, self.fc_weight, self.fc_bias, tape)
        lam = ops.softmax_vec(alpha, tape)
        out = ops.weighted_sum(lam, f0, f1, tape)
        if return_weights:
            return out, lam
        return out


@dataclass
class MgilConfig:
    """Hyperparameters of one multi-granular downsampling block."""

    in_channels: int
    out_channels: int | None = None  # default C' = C
    lie_depth_flie: int = 3
    lie_depth_cii: int = 2
    dilation_rates: tuple[int, ...] = (2, 3)
    fusion: str = "adaptive"  # "adaptive" | "additive"
    cii_enabled: bool = True
    cii_input: str = "raw"  # "raw" | "sct"
    normalize: bool = True

    def __post_init__(self):
        if self.out_channels is None:
            self.out_channels = self.in_channels
        self.dilation_rates = tuple(self.dilation_rates)
        if self.lie_depth_flie < 1:
            raise ContractError("lie_depth_flie must be >= 1")
        if self.lie_depth_cii < 0:
            raise ContractError("lie_depth_cii must be >= 0")
        if self.cii_enabled and not self.dilation_rates:
            raise ContractError("dilation_rates must be non-empty when the coarse branch is on")
        if self.fusion not in ("adaptive", "additive"):
            raise ContractError(f"unknown fusion mode {self.fusion!r}")
        if self.cii_input not in ("raw", "sct"):
            raise ContractError(f"unknown cii_input {self.cii_input!r}")


class MgilDownsampler(Module):
    """The composed block: fine branch + optional coarse branch + fusion."""

    def __init__(self, config: MgilConfig, rng: np.random.Generator):
        self.config = config
        c, c_out = config.in_channels, config.out_channels
        self.flie = Flie(c, c_out, config.lie_depth_flie, rng,
                         normalize=config.normalize)
        if config.cii_enabled:
            if config.cii_input == "raw":
                self.cii = Cii(c, c_out, config.lie_depth_cii,
                               config.dilation_rates, rng, stride=2,
                               normalize=config.normalize)
            else:
                # coarse branch consumes the already-halved SCT output
                self.cii = Cii(4 * c, c_out, config.lie_depth_cii,
                               config.dilation_rates, rng, stride=1,
                               normalize=config.normalize)
            if config.fusion == "adaptive":
                self.mgaf = Mgaf(c_out, rng)

    def branch_outputs(self, x: Tensor, tape: Tape | None = None, *,
                       training: bool = False) -> tuple[Tensor, Tensor | None]:
        f0 = self.flie.forward(x, tape, training=training)
        if not self.config.cii_enabled:
            return f0, None
        cii_in = x if self.config.cii_input == "raw" else sct_forward(x, tape)
        f1 = self.cii.forward(cii_in, tape, training=training)
        return f0, f1

    def forward(self, x: Tensor, tape: Tape | None = None, *, training: bool = False) -> Tensor:
        f0, f1 = self.branch_outputs(x, tape, training=training)
        if f1 is None:
            return f0
        if self.config.fusion == "adaptive":
            return self.mgaf.forward(f0, f1, tape)
        return ops.add(f0, f1, tape)


class StridedConvDownsampler(Module):
    """Baseline: one 3x3 stride-2 conv -> norm -> ReLU."""

    def __init__(self, in_channels: int, out_channels: int, rng: np.random.Generator, *,
                 normalize: bool = True):
        self.layer = ConvBnRelu(in_channels, out_channels, 3, rng, stride=2,
                                padding=1, normalize=normalize)

    def forward(self, x: Tensor, tape: Tape | None = None, *, training: bool = False) -> Tensor:
        return self.layer.forward(x, tape, training=training)


class MaxPoolDownsampler(Module):
    """Baseline: 2x2 max pooling; requires C' = C."""

    def __init__(self, in_channels: int, out_channels: int):
        if in_channels != out_channels:
            raise ContractError("max-pool downsampler cannot change channel count")

    def forward(self, x: Tensor, tape: Tape | None = None, *, training: bool = False) -> Tensor:
        return ops.max_pool2d(x, tape)


class SpdConvDownsampler(Module):
    """Baseline: space-to-channel rearrangement + one non-strided conv."""

    def __init__(self, in_channels: int, out_channels: int, rng: np.random.Generator, *,
                 normalize: bool = True):
        self.layer = ConvBnRelu(4 * in_channels, out_channels, 3, rng, padding=1,
                                normalize=normalize)

    def forward(self, x: Tensor, tape: Tape | None = None, *, training: bool = False) -> Tensor:
        return self.layer.forward(sct_forward(x, tape), tape, training=training)


DOWNSAMPLER_KINDS = ("strided_conv", "max_pool", "spd_conv", "mgil")


def make_downsampler(kind: str, in_channels: int, out_channels: int,
                     rng: np.random.Generator,
                     mgil_config: MgilConfig | None = None) -> Module:
    """Build one of the four pluggable downsamplers."""
    if kind == "strided_conv":
        return StridedConvDownsampler(in_channels, out_channels, rng)
    if kind == "max_pool":
        return MaxPoolDownsampler(in_channels, out_channels)
    if kind == "spd_conv":
        return SpdConvDownsampler(in_channels, out_channels, rng)
    if kind == "mgil":
        if mgil_config is None:
            mgil_config = MgilConfig(in_channels=in_channels, out_channels=out_channels)
        if (mgil_config.in_channels, mgil_config.out_channels) != (in_channels, out_channels):
            mgil_config = MgilConfig(
                in_channels=in_channels, out_channels=out_channels,
                lie_depth_flie=mgil_config.lie_depth_flie,
                lie_depth_cii=mgil_config.lie_depth_cii,
                dilation_rates=mgil_config.dilation_rates,
                fusion=mgil_config.fusion,
                cii_enabled=mgil_config.cii_enabled,
                cii_input=mgil_config.cii_input,
                normalize=mgil_config.normalize,
            )
        return MgilDownsampler(mgil_config, rng)
    raise ContractError(f"unknown downsampler kind {kind!r}")
