"""Differentiable operators used by the BPM-Fusion network.

Every operator takes and returns :class:`Tensor` objects. When a
:class:`Tape` is active the call is recorded together with its backward rule;
otherwise the operator is a plain numpy computation.
"""

from __future__ import annotations

import itertools
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ConfigError, DimensionError
from .tensor import BackwardFn, Tensor, active_tape


def _emit(op: str, inputs: Sequence[Tensor], data: np.ndarray, backward: BackwardFn) -> Tensor:
    out = Tensor(data, requires_grad=any(t.requires_grad for t in inputs))
    tape = active_tape()
    if tape is not None:
        tape.record(op, inputs, out, backward)
    return out


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def conv_output_extent(extent: int, kernel: int, stride: int, padding: int) -> int:
    """Output length of a strided, zero-padded convolution along one axis."""
    return (extent + 2 * padding - kernel) // stride + 1


# ---------------------------------------------------------------------------
# convolution (shared N-d implementation)


def _check_conv(x: Tensor, w: Tensor, b: Tensor | None, stride, padding, groups, nd, op):
    axes = ("D", "H", "W") if nd == 3 else ("M",)
    if x.ndim != nd + 2:
        raise DimensionError(f"{op}: input must have rank {nd + 2}, got shape {x.shape}", axis="rank")
    if w.ndim != nd + 2:
        raise DimensionError(f"{op}: weight must have rank {nd + 2}, got shape {w.shape}", axis="rank")
    if stride < 1 or padding < 0 or groups < 1:
        raise ConfigError(f"{op}: need stride >= 1, padding >= 0, groups >= 1 (got {stride}, {padding}, {groups})")
    c_in, c_out = x.shape[1], w.shape[0]
    if c_in % groups or c_out % groups:
        raise ConfigError(f"{op}: groups={groups} must divide C_in={c_in} and C_out={c_out}")
    if w.shape[1] != c_in // groups:
        raise DimensionError(
            f"{op}: weight axis 1 (C_in/groups) is {w.shape[1]}, expected {c_in // groups}", axis="C_in"
        )
    k = w.shape[2]
    if any(e != k for e in w.shape[2:]):
        raise DimensionError(f"{op}: kernel must be cubic, got {w.shape[2:]}", axis="kernel")
    for name, extent in zip(axes, x.shape[2:]):
        if k > extent + 2 * padding:
            raise DimensionError(
                f"{op}: kernel {k} exceeds padded extent {extent + 2 * padding} on axis {name}", axis=name
            )
    if b is not None and b.shape != (c_out,):
        raise DimensionError(f"{op}: bias shape {b.shape} != ({c_out},)", axis="C_out")


def _conv(op, x: Tensor, w: Tensor, b: Tensor | None, stride: int, padding: int, groups: int, nd: int) -> Tensor:
    _check_conv(x, w, b, stride, padding, groups, nd, op)
    xd, wd = x.data, w.data
    batch, c_in = xd.shape[:2]
    c_out, cg, k = wd.shape[0], wd.shape[1], wd.shape[2]
    co_g = c_out // groups
    kvol = k**nd
    sp = tuple(range(2, 2 + nd))

    xp = np.pad(xd, [(0, 0), (0, 0)] + [(padding, padding)] * nd) if padding else xd
    win = sliding_window_view(xp, (k,) * nd, axis=sp)
    win = win[(slice(None), slice(None)) + (slice(None, None, stride),) * nd]
    out_sp = win.shape[2 : 2 + nd]
    npos = int(np.prod(out_sp))
    # [B, G, Cg, *out, *k] -> [G, B, *out, Cg, *k] -> [G, B*P, Cg*K]
    win = win.reshape((batch, groups, cg) + out_sp + (k,) * nd)
    order = (1, 0) + tuple(range(3, 3 + nd)) + (2,) + tuple(range(3 + nd, 3 + 2 * nd))
    cols = np.ascontiguousarray(win.transpose(order)).reshape(groups, batch * npos, cg * kvol)
    wg = wd.reshape(groups, co_g, cg * kvol)
    out = np.matmul(cols, wg.transpose(0, 2, 1))  # [G, B*P, Co_g]
    out = out.reshape((groups, batch) + out_sp + (co_g,))
    out = out.transpose((1, 0, nd + 2) + tuple(range(2, 2 + nd))).reshape((batch, c_out) + out_sp)
    if b is not None:
        out = out + b.data.reshape((1, c_out) + (1,) * nd)

    def backward(g):
        gg = g.reshape((batch, groups, co_g) + out_sp)
        gg = gg.transpose((1, 0) + tuple(range(3, 3 + nd)) + (2,)).reshape(groups, batch * npos, co_g)
        gw = np.matmul(gg.transpose(0, 2, 1), cols).reshape(wd.shape) if w.requires_grad else None
        gb = g.sum(axis=(0,) + sp) if (b is not None and b.requires_grad) else None
        gx = None
        if x.requires_grad:
            dcols = np.matmul(gg, wg).reshape((groups, batch) + out_sp + (cg,) + (k,) * nd)
            back = (1, 0, nd + 2) + tuple(range(2, 2 + nd)) + tuple(range(nd + 3, 2 * nd + 3))
            dcols = dcols.transpose(back).reshape((batch, c_in) + out_sp + (k,) * nd)
            dxp = np.zeros(xp.shape, dtype=dcols.dtype)
            for offs in itertools.product(range(k), repeat=nd):
                sl = tuple(slice(o, o + stride * (n - 1) + 1, stride) for o, n in zip(offs, out_sp))
                dxp[(slice(None), slice(None)) + sl] += dcols[(Ellipsis,) + offs]
            if padding:
                dxp = dxp[(slice(None), slice(None)) + (slice(padding, -padding),) * nd]
            gx = dxp
        return (gx, gw, gb) if b is not None else (gx, gw)

    inputs = (x, w, b) if b is not None else (x, w)
    return _emit(op, inputs, out, backward)


def conv3d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1, padding: int = 0,
           groups: int = 1) -> Tensor:
    """Grouped, strided 3-D convolution over ``[B, C_in, D, H, W]``."""
    return _conv("conv3d", x, weight, bias, stride, padding, groups, nd=3)


def conv1d_time(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1, padding: int = 0,
                groups: int = 1) -> Tensor:
    """1-D convolution along the last (time) axis of ``[B, C, M]``."""
    return _conv("conv1d_time", x, weight, bias, stride, padding, groups, nd=1)


# ---------------------------------------------------------------------------
# dense layers


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Affine map ``x @ weight.T + bias`` applied along the last axis."""
    if weight.ndim != 2:
        raise DimensionError(f"linear: weight must be [F_out, F_in], got {weight.shape}", axis="weight")
    f_out, f_in = weight.shape
    if x.shape[-1] != f_in:
        raise DimensionError(f"linear: trailing extent {x.shape[-1]} != F_in {f_in}", axis=x.ndim - 1)
    if bias is not None and bias.shape != (f_out,):
        raise DimensionError(f"linear: bias shape {bias.shape} != ({f_out},)", axis="F_out")
    out = x.data @ weight.data.T
    if bias is not None:
        out = out + bias.data

    def backward(g):
        g2 = g.reshape(-1, f_out)
        gx = g @ weight.data if x.requires_grad else None
        gw = g2.T @ x.data.reshape(-1, f_in) if weight.requires_grad else None
        gb = g2.sum(axis=0) if (bias is not None and bias.requires_grad) else None
        return (gx, gw, gb) if bias is not None else (gx, gw)

    inputs = (x, weight, bias) if bias is not None else (x, weight)
    return _emit("linear", inputs, out, backward)


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, running_mean: Tensor, running_var: Tensor,
               eps: float = 1e-5, momentum: float = 0.1, training: bool = True, axis: int = 1) -> Tensor:
    """Batch normalization over every axis except ``axis``.

    In training mode the batch statistics normalize the input and the running
    statistics are updated in place as an exponential moving average (the
    running variance uses the unbiased estimate). In eval mode the running
    statistics are used instead.
    """
    axis = axis % x.ndim
    feat = x.shape[axis]
    for name, t in (("gamma", gamma), ("beta", beta), ("running_mean", running_mean), ("running_var", running_var)):
        if t.shape != (feat,):
            raise DimensionError(f"batch_norm: {name} shape {t.shape} != ({feat},)", axis=axis)
    red = tuple(i for i in range(x.ndim) if i != axis)
    bshape = [1] * x.ndim
    bshape[axis] = feat
    bshape = tuple(bshape)
    xd = x.data
    n = xd.size // feat

    if training:
        mu = xd.mean(axis=red, keepdims=True)
        centered = xd - mu
        var = (centered * centered).mean(axis=red, keepdims=True)
        unbiased = var * (n / (n - 1)) if n > 1 else var
        running_mean.data[...] = (1 - momentum) * running_mean.data + momentum * mu.reshape(feat)
        running_var.data[...] = (1 - momentum) * running_var.data + momentum * unbiased.reshape(feat)
    else:
        centered = xd - running_mean.data.reshape(bshape)
        var = running_var.data.reshape(bshape)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv_std
    g_b = gamma.data.reshape(bshape)
    out = xhat * g_b + beta.data.reshape(bshape)

    def backward(g):
        ggamma = (g * xhat).sum(axis=red) if gamma.requires_grad else None
        gbeta = g.sum(axis=red) if beta.requires_grad else None
        gx = None
        if x.requires_grad:
            dxhat = g * g_b
            if training:
                gx = inv_std / n * (
                    n * dxhat
                    - dxhat.sum(axis=red, keepdims=True)
                    - xhat * (dxhat * xhat).sum(axis=red, keepdims=True)
                )
            else:
                gx = dxhat * inv_std
        return gx, ggamma, gbeta, None, None

    return _emit("batch_norm", (x, gamma, beta, running_mean, running_var), out, backward)


# ---------------------------------------------------------------------------
# elementwise and shape ops


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    # np.maximum keeps NaN visible so a diverging run is caught at the loss
    return _emit("relu", (x,), np.maximum(x.data, 0).astype(x.dtype, copy=False), lambda g: (g * mask,))


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum of two tensors of identical shape."""
    if a.shape != b.shape:
        raise DimensionError(f"add: shapes differ {a.shape} vs {b.shape}")
    return _emit("add", (a, b), a.data + b.data, lambda g: (g, g))


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    if not tensors:
        raise DimensionError("concat: nothing to concatenate")
    ndim = tensors[0].ndim
    axis = axis % ndim
    ref = tensors[0].shape
    for t in tensors[1:]:
        if t.ndim != ndim or any(t.shape[i] != ref[i] for i in range(ndim) if i != axis):
            raise DimensionError(f"concat: {t.shape} incompatible with {ref} off axis {axis}", axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    return _emit("concat", tuple(tensors), out, lambda g: tuple(np.split(g, cuts, axis=axis)))


def flatten(x: Tensor, start_axis: int = 1) -> Tensor:
    start_axis = start_axis % x.ndim
    new_shape = x.shape[:start_axis] + (int(np.prod(x.shape[start_axis:])),)
    return _emit("flatten", (x,), x.data.reshape(new_shape), lambda g: (g.reshape(x.shape),))


def swapaxes(x: Tensor, a: int, b: int) -> Tensor:
    return _emit("swapaxes", (x,), np.swapaxes(x.data, a, b), lambda g: (np.swapaxes(g, a, b),))


def mean(x: Tensor, axis: int) -> Tensor:
    """Mean over one axis (the axis is removed)."""
    axis = axis % x.ndim
    count = x.shape[axis]

    def backward(g):
        return (np.broadcast_to(np.expand_dims(g, axis) / count, x.shape).copy(),)

    return _emit("mean", (x,), x.data.mean(axis=axis), backward)


# ---------------------------------------------------------------------------
# loss


def sigmoid(z: np.ndarray) -> np.ndarray:
    """Numerically stable logistic function on raw arrays (no tape)."""
    z = np.asarray(z)
    out = np.empty_like(z, dtype=np.result_type(z, np.float32))
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def bce_with_logits(logits: Tensor, labels, class_weights: tuple[float, float] | None = None) -> Tensor:
    """Mean binary cross-entropy on raw logits.

    ``class_weights`` is ``(weight_for_label_0, weight_for_label_1)``; each
    sample's loss is scaled by the weight of its label before averaging.
    """
    y = np.asarray(labels, dtype=logits.dtype).reshape(logits.shape)
    if logits.ndim != 1:
        raise DimensionError(f"bce_with_logits: logits must be [B], got {logits.shape}")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("bce_with_logits: labels must be 0 or 1")
    z = logits.data
    per = np.maximum(z, 0) - z * y + np.log1p(np.exp(-np.abs(z)))
    if class_weights is None:
        w = np.ones_like(z)
    else:
        w = np.where(y == 1, class_weights[1], class_weights[0]).astype(z.dtype)
    batch = z.shape[0]
    loss = np.asarray((w * per).sum() / batch, dtype=z.dtype)

    def backward(g):
        return (g * w * (sigmoid(z) - y) / batch,)

    return _emit("bce_with_logits", (logits,), loss, backward)
