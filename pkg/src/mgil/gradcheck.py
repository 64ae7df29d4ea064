"""Central finite-difference verification of every differentiable op.

Each registry entry builds small random float64 instances, runs the
recorded backward pass, and compares every input/parameter gradient against
a central difference with step 1e-4.  The reported number is the max
relative error (with an absolute floor of 1) over all elements and
instances; anything below 1e-4 passes.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from . import ops
from .blocks import MgilConfig, MgilDownsampler, sct_forward, sct_inverse
from .rng import derived_generator
from .tensor import Tape, Tensor

STEP = 1e-4
TOLERANCE = 1e-4


def _rel_err(a: float, n: float) -> float:
    return abs(a - n) / max(1.0, abs(a), abs(n))


def check_gradients(forward: Callable[[Tape | None], Tensor],
                    tensors: list[Tensor], rng: np.random.Generator, *,
                    step: float = STEP) -> float:
    """Max relative error between recorded and numeric gradients.

    ``forward`` must recompute from the current contents of ``tensors``
    (which are perturbed in place); the output is scalarized by a fixed
    random projection.
    """
    tape = Tape()
    out = forward(tape)
    proj = rng.uniform(-1.0, 1.0, size=out.data.shape)
    for t in tensors:
        t.grad = None
    out.grad = proj
    tape.replay()
    analytic = [t.grad.copy() if t.grad is not None else np.zeros_like(t.data)
                for t in tensors]

    def scalar() -> float:
        return float(np.sum(proj * forward(None).data))

    worst = 0.0
    for t, a in zip(tensors, analytic):
        flat = t.data.reshape(-1)
        a_flat = a.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + step
            fp = scalar()
            flat[j] = orig - step
            fm = scalar()
            flat[j] = orig
            numeric = (fp - fm) / (2 * step)
            worst = max(worst, _rel_err(float(a_flat[j]), numeric))
    return worst


def _t(rng, *shape, low=-1.0, high=1.0) -> Tensor:
    return Tensor(rng.uniform(low, high, size=shape))


def _check_conv2d(rng: np.random.Generator) -> float:
    stride = int(rng.integers(1, 3))
    dilation = int(rng.integers(1, 3))
    pad = int(rng.integers(0, 3))
    h = int(rng.integers(5, 8))
    eff = 3 + 2 * (dilation - 1)
    if eff > h + 2 * pad:
        pad = (eff - h + 1) // 2 + 1
    x = _t(rng, 2, 2, h, h)
    w = _t(rng, 3, 2, 3, 3)
    b = _t(rng, 3)
    return check_gradients(
        lambda tape: ops.conv2d(x, w, b, stride=stride, dilation=dilation,
                                padding=pad, tape=tape),
        [x, w, b], rng)


def _check_relu(rng) -> float:
    # keep inputs away from the kink at 0, where finite differences lie
    data = rng.uniform(0.1, 1.0, size=(2, 3, 4, 4)) * rng.choice([-1.0, 1.0], size=(2, 3, 4, 4))
    x = Tensor(data)
    return check_gradients(lambda tape: ops.relu(x, tape), [x], rng)


def _check_concat(rng) -> float:
    parts = [_t(rng, 2, c, 3, 3) for c in (1, 2, 3)]
    return check_gradients(lambda tape: ops.concat_channels(parts, tape), parts, rng)


def _check_slice(rng) -> float:
    x = _t(rng, 2, 5, 3, 3)
    return check_gradients(lambda tape: ops.slice_channels(x, 1, 4, tape), [x], rng)


def _check_gap(rng) -> float:
    x = _t(rng, 2, 3, 4, 5)
    return check_gradients(lambda tape: ops.global_avg_pool(x, tape), [x], rng)


def _check_fc(rng) -> float:
    x = _t(rng, 3, 5)
    w = _t(rng, 4, 5)
    b = _t(rng, 4)
    return check_gradients(lambda tape: ops.fully_connected(x, w, b, tape), [x, w, b], rng)


def _check_conv1d(rng) -> float:
    x = _t(rng, 3, 8)
    k = _t(rng, 3)
    return check_gradients(lambda tape: ops.conv1d_channels(x, k, tape), [x, k], rng)


def _check_softmax(rng) -> float:
    x = _t(rng, 3, 4, low=-2.0, high=2.0)
    return check_gradients(lambda tape: ops.softmax_vec(x, tape), [x], rng)


def _check_weighted_sum(rng) -> float:
    lam = _t(rng, 2, 2)
    f0 = _t(rng, 2, 3, 3, 3)
    f1 = _t(rng, 2, 3, 3, 3)
    return check_gradients(lambda tape: ops.weighted_sum(lam, f0, f1, tape),
                           [lam, f0, f1], rng)


def _check_max_pool(rng) -> float:
    # keep window entries well separated so the argmax is stable under +/- step
    base = rng.uniform(-1.0, 1.0, size=(2, 2, 2, 2, 1, 1))
    offsets = np.stack([rng.permutation([0.0, 0.25, 0.5, 0.75]).reshape(2, 2)
                        for _ in range(16)]).reshape(2, 2, 2, 2, 2, 2)
    data = (base + offsets).transpose(0, 1, 2, 4, 3, 5).reshape(2, 2, 4, 4)
    x = Tensor(data)
    return check_gradients(lambda tape: ops.max_pool2d(x, tape), [x], rng)


def _check_batch_norm(rng) -> float:
    x = _t(rng, 3, 2, 3, 3)
    gamma = _t(rng, 2, low=0.5, high=1.5)
    beta = _t(rng, 2)
    rm = Tensor(np.zeros(2))
    rv = Tensor(np.ones(2))
    return check_gradients(
        lambda tape: ops.batch_norm2d(x, gamma, beta, rm, rv, training=True, tape=tape),
        [x, gamma, beta], rng)


def _check_sct(rng) -> float:
    x = _t(rng, 2, 2, 4, 4)
    return check_gradients(lambda tape: sct_forward(x, tape), [x], rng)


def _check_sct_inverse(rng) -> float:
    x = _t(rng, 2, 4, 2, 2)
    return check_gradients(lambda tape: sct_inverse(x, tape), [x], rng)


def _check_cross_entropy(rng) -> float:
    x = _t(rng, 4, 3, low=-2.0, high=2.0)
    labels = rng.integers(0, 3, size=4)
    return check_gradients(lambda tape: ops.cross_entropy_loss(x, labels, tape), [x], rng)


def _check_mse(rng) -> float:
    x = _t(rng, 2, 1, 3, 3)
    target = rng.uniform(-1, 1, size=(2, 1, 3, 3))
    return check_gradients(lambda tape: ops.mse_loss(x, target, tape), [x], rng)


def _check_mgil(rng) -> float:
    cfg = MgilConfig(in_channels=2, lie_depth_flie=2, lie_depth_cii=1,
                     dilation_rates=(2, 3))
    block = MgilDownsampler(cfg, rng)
    for _, t in block.named_tensors():  # 64-bit replay mode
        t.data = t.data.astype(np.float64)
    params = [p for _, p in block.named_parameters()]
    x = _t(rng, 1, 2, 4, 4)
    return check_gradients(
        lambda tape: block.forward(x, tape, training=True),
        [x] + params, rng)


REGISTRY: list[tuple[str, Callable[[np.random.Generator], float], int]] = [
    ("conv2d", _check_conv2d, 20),
    ("relu", _check_relu, 20),
    ("concat_channels", _check_concat, 20),
    ("slice_channels", _check_slice, 20),
    ("global_avg_pool", _check_gap, 20),
    ("fully_connected", _check_fc, 20),
    ("conv1d_channels", _check_conv1d, 20),
    ("softmax_vec", _check_softmax, 20),
    ("weighted_sum", _check_weighted_sum, 20),
    ("max_pool2d", _check_max_pool, 20),
    ("batch_norm2d", _check_batch_norm, 20),
    ("sct_forward", _check_sct, 20),
    ("sct_inverse", _check_sct_inverse, 20),
    ("cross_entropy_loss", _check_cross_entropy, 20),
    ("mse_loss", _check_mse, 20),
    ("mgil_forward", _check_mgil, 2),
]


def run_suite(registry=None, seed: int = 1234) -> list[tuple[str, float]]:
    """Run every registered check; returns (op name, max relative error)."""
    results = []
    for name, check, n_instances in (registry or REGISTRY):
        worst = 0.0
        for i in range(n_instances):
            rng = derived_generator(seed, "gradcheck", name, i)
            worst = max(worst, check(rng))
        results.append((name, worst))
    return results
