"""Differentiable primitives on N,C,H,W tensors.

Every op takes an optional :class:`~mgil.tensor.Tape`; when given, the op
records its adjoint so a later ``tape.backward(loss)`` accumulates gradients
into the inputs.  All ops preserve the input dtype, which is how the 64-bit
replay mode for gradient checking works: feed float64 tensors and the whole
graph runs in float64.
"""

from __future__ import annotations

import numpy as np

from .tensor import ContractError, Tape, Tensor, check_nchw


def conv_output_size(extent: int, k: int, stride: int, dilation: int, pad: int) -> int:
    eff = k + (k - 1) * (dilation - 1)
    if eff > extent + 2 * pad:
        raise ContractError(
            f"effective kernel extent {eff} exceeds padded input extent {extent + 2 * pad}"
        )
    return (extent + 2 * pad - eff) // stride + 1


def _im2col(xp: np.ndarray, k: int, stride: int, dilation: int, ho: int, wo: int) -> np.ndarray:
    n, c = xp.shape[:2]
    cols = np.empty((n, c, k, k, ho, wo), dtype=xp.dtype)
    for a in range(k):
        ia = a * dilation
        for b in range(k):
            jb = b * dilation
            cols[:, :, a, b] = xp[:, :, ia:ia + stride * ho:stride, jb:jb + stride * wo:stride]
    return cols


def _col2im(dcols: np.ndarray, xp_shape, k: int, stride: int, dilation: int,
            ho: int, wo: int) -> np.ndarray:
    dxp = np.zeros(xp_shape, dtype=dcols.dtype)
    for a in range(k):
        ia = a * dilation
        for b in range(k):
            jb = b * dilation
            dxp[:, :, ia:ia + stride * ho:stride, jb:jb + stride * wo:stride] += dcols[:, :, a, b]
    return dxp


def conv2d(x: Tensor, weight: Tensor, bias: Tensor, *, stride: int = 1,
           dilation: int = 1, padding: int = 0, tape: Tape | None = None) -> Tensor:
    """2D cross-correlation with square kernels.

    Output spatial size is ``(extent + 2*pad - eff)//stride + 1`` per axis
    with ``eff = k + (k-1)*(dilation-1)``.
    """
    check_nchw(x)
    if weight.data.ndim != 4:
        raise ContractError("weight must be rank-4 (out, in, kH, kW)")
    o, ci, kh, kw = weight.data.shape
    if kh != kw:
        raise ContractError(f"kernels must be square, got {kh}x{kw}")
    n, c, h, w = x.data.shape
    if c != ci:
        raise ContractError(f"input channels {c} != kernel in_channels {ci}")
    if bias.data.shape != (o,):
        raise ContractError(f"bias shape {bias.data.shape} != ({o},)")
    ho = conv_output_size(h, kh, stride, dilation, padding)
    wo = conv_output_size(w, kw, stride, dilation, padding)

    if padding:
        xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    else:
        xp = x.data
    cols = _im2col(xp, kh, stride, dilation, ho, wo)
    cols2 = cols.reshape(n, c * kh * kw, ho * wo)
    w2 = weight.data.reshape(o, c * kh * kw)
    out = (w2 @ cols2).reshape(n, o, ho, wo) + bias.data.reshape(1, o, 1, 1)
    result = Tensor(out)

    if tape is not None:
        def backward():
            g = result.grad
            if g is None:
                return
            g2 = g.reshape(n, o, ho * wo)
            bias.accumulate_grad(g.sum(axis=(0, 2, 3)))
            dw = np.einsum("nop,ncp->oc", g2, cols2, optimize=True)
            weight.accumulate_grad(dw.reshape(o, c, kh, kw))
            dcols2 = np.matmul(w2.T, g2)
            dcols = dcols2.reshape(n, c, kh, kw, ho, wo)
            dxp = _col2im(dcols, xp.shape, kh, stride, dilation, ho, wo)
            if padding:
                dxp = dxp[:, :, padding:-padding, padding:-padding]
            x.accumulate_grad(dxp)
        tape.record(backward)
    return result


def relu(x: Tensor, tape: Tape | None = None) -> Tensor:
    out = Tensor(np.maximum(x.data, 0))
    if tape is not None:
        mask = x.data > 0

        def backward():
            if out.grad is not None:
                x.accumulate_grad(out.grad * mask)
        tape.record(backward)
    return out


def concat_channels(parts: list[Tensor], tape: Tape | None = None) -> Tensor:
    if not parts:
        raise ContractError("concat_channels needs at least one part")
    ref = parts[0].data.shape
    for i, p in enumerate(parts):
        s = p.data.shape
        if len(s) != 4 or (s[0], s[2], s[3]) != (ref[0], ref[2], ref[3]):
            raise ContractError(
                f"part {i} shape {s} mismatches N/H/W of part 0 shape {ref}"
            )
    out = Tensor(np.concatenate([p.data for p in parts], axis=1))
    if tape is not None:
        splits = np.cumsum([p.data.shape[1] for p in parts])[:-1]

        def backward():
            if out.grad is None:
                return
            for p, g in zip(parts, np.split(out.grad, splits, axis=1)):
                p.accumulate_grad(g)
        tape.record(backward)
    return out


def slice_channels(x: Tensor, start: int, stop: int, tape: Tape | None = None) -> Tensor:
    check_nchw(x)
    if not (0 <= start < stop <= x.data.shape[1]):
        raise ContractError(f"channel slice [{start}:{stop}] out of range for C={x.data.shape[1]}")
    out = Tensor(x.data[:, start:stop].copy())
    if tape is not None:
        def backward():
            if out.grad is None:
                return
            g = np.zeros_like(x.data)
            g[:, start:stop] = out.grad
            x.accumulate_grad(g)
        tape.record(backward)
    return out


def global_avg_pool(x: Tensor, tape: Tape | None = None) -> Tensor:
    check_nchw(x)
    n, c, h, w = x.data.shape
    out = Tensor(x.data.mean(axis=(2, 3), keepdims=True))
    if tape is not None:
        def backward():
            if out.grad is not None:
                x.accumulate_grad(np.broadcast_to(out.grad / (h * w), x.data.shape).copy())
        tape.record(backward)
    return out


def flatten_vec(x: Tensor, tape: Tape | None = None) -> Tensor:
    """(N, C, 1, 1) -> (N, C)."""
    n, c = x.data.shape[:2]
    if x.data.ndim != 4 or x.data.shape[2:] != (1, 1):
        raise ContractError(f"flatten_vec expects (N,C,1,1), got {x.data.shape}")
    out = Tensor(x.data.reshape(n, c))
    if tape is not None:
        def backward():
            if out.grad is not None:
                x.accumulate_grad(out.grad.reshape(n, c, 1, 1))
        tape.record(backward)
    return out


def fully_connected(x: Tensor, weight: Tensor, bias: Tensor,
                    tape: Tape | None = None) -> Tensor:
    """y = x @ W.T + b for x of shape (N, C), W of shape (O, C)."""
    if x.data.ndim != 2:
        raise ContractError(f"fully_connected expects (N,C), got {x.data.shape}")
    o, c = weight.data.shape
    if x.data.shape[1] != c:
        raise ContractError(f"input features {x.data.shape[1]} != weight in-dim {c}")
    out = Tensor(x.data @ weight.data.T + bias.data)
    if tape is not None:
        def backward():
            g = out.grad
            if g is None:
                return
            weight.accumulate_grad(g.T @ x.data)
            bias.accumulate_grad(g.sum(axis=0))
            x.accumulate_grad(g @ weight.data)
        tape.record(backward)
    return out


def conv1d_channels(x: Tensor, kernel: Tensor, tape: Tape | None = None) -> Tensor:
    """Shared-kernel 1D cross-correlation along the channel axis (ECA style).

    x: (N, C); kernel: (k,) with k odd, k <= C; zero padding (k-1)/2 keeps
    the length at C.
    """
    if x.data.ndim != 2:
        raise ContractError(f"conv1d_channels expects (N,C), got {x.data.shape}")
    k = kernel.data.shape[0]
    if kernel.data.ndim != 1 or k % 2 == 0:
        raise ContractError(f"kernel size must be odd, got {kernel.data.shape}")
    n, c = x.data.shape
    if k > c:
        raise ContractError(f"kernel size {k} exceeds channel count {c}")
    pad = (k - 1) // 2
    xp = np.pad(x.data, ((0, 0), (pad, pad)))
    out_data = np.zeros_like(x.data)
    for j in range(k):
        out_data += kernel.data[j] * xp[:, j:j + c]
    out = Tensor(out_data)
    if tape is not None:
        def backward():
            g = out.grad
            if g is None:
                return
            dk = np.array([np.sum(g * xp[:, j:j + c]) for j in range(k)], dtype=x.data.dtype)
            kernel.accumulate_grad(dk)
            dxp = np.zeros_like(xp)
            for j in range(k):
                dxp[:, j:j + c] += kernel.data[j] * g
            x.accumulate_grad(dxp[:, pad:pad + c] if pad else dxp)
        tape.record(backward)
    return out


def softmax_vec(x: Tensor, tape: Tape | None = None) -> Tensor:
    """Row-wise softmax with max-subtraction for stability."""
    if x.data.ndim != 2:
        raise ContractError(f"softmax_vec expects (N,m), got {x.data.shape}")
    if np.isnan(x.data).any():
        raise ContractError("softmax_vec received NaN input")
    z = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=1, keepdims=True)
    out = Tensor(y)
    if tape is not None:
        def backward():
            g = out.grad
            if g is None:
                return
            x.accumulate_grad(y * (g - np.sum(g * y, axis=1, keepdims=True)))
        tape.record(backward)
    return out


def add(a: Tensor, b: Tensor, tape: Tape | None = None) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ContractError(f"add shape mismatch: {a.data.shape} vs {b.data.shape}")
    out = Tensor(a.data + b.data)
    if tape is not None:
        def backward():
            if out.grad is not None:
                a.accumulate_grad(out.grad)
                b.accumulate_grad(out.grad)
        tape.record(backward)
    return out


def weighted_sum(lam: Tensor, f0: Tensor, f1: Tensor,
                 tape: Tape | None = None) -> Tensor:
    """Per-sample convex-style combination: out[n] = lam[n,0]*f0[n] + lam[n,1]*f1[n]."""
    if f0.data.shape != f1.data.shape:
        raise ContractError(f"operand shape mismatch: {f0.data.shape} vs {f1.data.shape}")
    n = f0.data.shape[0]
    if lam.data.shape != (n, 2):
        raise ContractError(f"weights must be (N,2)=({n},2), got {lam.data.shape}")
    l0 = lam.data[:, 0].reshape((n,) + (1,) * (f0.data.ndim - 1))
    l1 = lam.data[:, 1].reshape((n,) + (1,) * (f0.data.ndim - 1))
    out = Tensor(l0 * f0.data + l1 * f1.data)
    if tape is not None:
        def backward():
            g = out.grad
            if g is None:
                return
            axes = tuple(range(1, g.ndim))
            dl = np.stack([(g * f0.data).sum(axis=axes), (g * f1.data).sum(axis=axes)], axis=1)
            lam.accumulate_grad(dl)
            f0.accumulate_grad(l0 * g)
            f1.accumulate_grad(l1 * g)
        tape.record(backward)
    return out


def max_pool2d(x: Tensor, tape: Tape | None = None) -> Tensor:
    """2x2 max pooling with stride 2; ties go to the lowest flat index."""
    check_nchw(x)
    n, c, h, w = x.data.shape
    if h % 2 or w % 2:
        raise ContractError(f"max_pool2d needs even H and W, got {h}x{w}")
    windows = x.data.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5)
    flat = windows.reshape(n, c, h // 2, w // 2, 4)
    idx = flat.argmax(axis=-1)  # argmax returns the first max: lowest flat index
    out = Tensor(np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0])
    if tape is not None:
        def backward():
            g = out.grad
            if g is None:
                return
            dflat = np.zeros_like(flat)
            np.put_along_axis(dflat, idx[..., None], g[..., None], axis=-1)
            dx = dflat.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5)
            x.accumulate_grad(dx.reshape(n, c, h, w))
        tape.record(backward)
    return out


def batch_norm2d(x: Tensor, gamma: Tensor, beta: Tensor,
                 running_mean: Tensor, running_var: Tensor, *,
                 training: bool, momentum: float = 0.1, eps: float = 1e-5,
                 tape: Tape | None = None) -> Tensor:
    """Per-channel batch normalization with learnable scale and shift.

    Training mode normalizes with batch statistics and updates the running
    buffers in place; eval mode uses the stored statistics, making the op a
    pure per-channel affine map.
    """
    check_nchw(x)
    n, c, h, w = x.data.shape
    if gamma.data.shape != (c,) or beta.data.shape != (c,):
        raise ContractError(f"scale/shift must be shape ({c},)")
    gw = gamma.data.reshape(1, c, 1, 1)
    bw = beta.data.reshape(1, c, 1, 1)
    if training:
        mean = x.data.mean(axis=(0, 2, 3))
        var = x.data.var(axis=(0, 2, 3))
        running_mean.data[...] = (1 - momentum) * running_mean.data + momentum * mean
        running_var.data[...] = (1 - momentum) * running_var.data + momentum * var
    else:
        mean = running_mean.data.astype(x.data.dtype)
        var = running_var.data.astype(x.data.dtype)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mean.reshape(1, c, 1, 1)) * inv_std.reshape(1, c, 1, 1)
    out = Tensor(gw * xhat + bw)
    if tape is not None:
        m = n * h * w

        def backward():
            g = out.grad
            if g is None:
                return
            dbeta = g.sum(axis=(0, 2, 3))
            dgamma = (g * xhat).sum(axis=(0, 2, 3))
            gamma.accumulate_grad(dgamma)
            beta.accumulate_grad(dbeta)
            scale = (gamma.data * inv_std).reshape(1, c, 1, 1)
            if training:
                dx = scale * (g - dbeta.reshape(1, c, 1, 1) / m
                              - xhat * dgamma.reshape(1, c, 1, 1) / m)
            else:
                dx = scale * g
            x.accumulate_grad(dx)
        tape.record(backward)
    return out


def cross_entropy_loss(logits: Tensor, labels: np.ndarray,
                       tape: Tape | None = None) -> Tensor:
    """Mean softmax cross-entropy over the batch; labels are class indices."""
    if logits.data.ndim != 2:
        raise ContractError(f"logits must be (N,K), got {logits.data.shape}")
    n, k = logits.data.shape
    labels = np.asarray(labels)
    if labels.shape != (n,) or labels.min() < 0 or labels.max() >= k:
        raise ContractError("labels must be length-N class indices below K")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    logsumexp = np.log(np.exp(z).sum(axis=1))
    loss = Tensor(np.mean(logsumexp - z[np.arange(n), labels]))
    if tape is not None:
        def backward():
            if loss.grad is None:
                return
            p = np.exp(z)
            p /= p.sum(axis=1, keepdims=True)
            p[np.arange(n), labels] -= 1
            logits.accumulate_grad(loss.grad * p / n)
        tape.record(backward)
    return loss


def mse_loss(pred: Tensor, target: np.ndarray, tape: Tape | None = None) -> Tensor:
    """Mean squared error against a constant target."""
    target = np.asarray(target, dtype=pred.data.dtype)
    if target.shape != pred.data.shape:
        raise ContractError(f"target shape {target.shape} != prediction shape {pred.data.shape}")
    diff = pred.data - target
    loss = Tensor(np.mean(diff * diff))
    if tape is not None:
        def backward():
            if loss.grad is not None:
                pred.accumulate_grad(loss.grad * 2.0 * diff / diff.size)
        tape.record(backward)
    return loss
