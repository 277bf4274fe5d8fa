"""Differentiable primitive operations on :class:`Tensor`.

Each op computes its forward value with numpy and registers a backward
closure. Broadcasting follows numpy rules; gradients are reduced back to the
operand shape.
"""
from __future__ import annotations

from typing import Sequence

import numpy as np

from .. import kernels
from ..errors import ShapeError
from . import flops
from .tensor import Tensor, as_tensor, check_same_shape

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ----- elementwise arithmetic ------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return Tensor.make(a.data + b.data, (a, b),
                       lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return Tensor.make(a.data - b.data, (a, b),
                       lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)), "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data

    def backward(g):
        return (_unbroadcast(g * bd, ad.shape) if a.requires_grad else None,
                _unbroadcast(g * ad, bd.shape) if b.requires_grad else None)

    return Tensor.make(ad * bd, (a, b), backward, "mul")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    out = ad / bd

    def backward(g):
        return (_unbroadcast(g / bd, ad.shape) if a.requires_grad else None,
                _unbroadcast(-g * out / bd, bd.shape) if b.requires_grad else None)

    return Tensor.make(out, (a, b), backward, "div")


def power(a: Tensor, exponent: float) -> Tensor:
    ad = a.data
    return Tensor.make(ad ** exponent, (a,),
                       lambda g: (g * exponent * ad ** (exponent - 1),), "pow")


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return Tensor.make(out, (a,), lambda g: (g * out,), "exp")


def log(a: Tensor) -> Tensor:
    ad = a.data
    return Tensor.make(np.log(ad), (a,), lambda g: (g / ad,), "log")


def maximum(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    mask = a.data >= b.data

    def backward(g):
        return (_unbroadcast(np.where(mask, g, 0.0), a.shape),
                _unbroadcast(np.where(mask, 0.0, g), b.shape))

    return Tensor.make(np.maximum(a.data, b.data), (a, b), backward, "maximum")


def minimum(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    mask = a.data <= b.data

    def backward(g):
        return (_unbroadcast(np.where(mask, g, 0.0), a.shape),
                _unbroadcast(np.where(mask, 0.0, g), b.shape))

    return Tensor.make(np.minimum(a.data, b.data), (a, b), backward, "minimum")


# ----- activations -------------------------------------------------------------


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # branch-free stable form: exp of a non-positive argument only
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def sigmoid(x: Tensor) -> Tensor:
    s = _sigmoid(x.data)
    return Tensor.make(s, (x,), lambda g: (g * s * (1.0 - s),), "sigmoid")


def silu(x: Tensor) -> Tensor:
    xd = x.data
    s = _sigmoid(xd)
    return Tensor.make(xd * s, (x,), lambda g: (g * (s + xd * s * (1.0 - s)),), "silu")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return Tensor.make(np.where(mask, x.data, 0.0), (x,), lambda g: (np.where(mask, g, 0.0),), "relu")


def softplus(x: Tensor) -> Tensor:
    xd = x.data
    out = np.maximum(xd, 0.0) + np.log1p(np.exp(-np.abs(xd)))
    return Tensor.make(out, (x,), lambda g: (g * _sigmoid(xd),), "softplus")


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    if not -x.ndim <= axis < x.ndim:
        raise ShapeError(f"softmax axis {axis} out of range for rank {x.ndim}")
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (s * (g - (g * s).sum(axis=axis, keepdims=True)),)

    return Tensor.make(s, (x,), backward, "softmax")


def bce_with_logits(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Elementwise binary cross-entropy on raw logits."""
    z = logits.data
    y = np.asarray(targets, dtype=np.float64)
    out = np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z)))
    return Tensor.make(out, (logits,), lambda g: (g * (_sigmoid(z) - y),), "bce")


# ----- reductions and layout ------------------------------------------------------


def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    shape = x.shape

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape),)

    return Tensor.make(np.asarray(x.data.sum(axis=axis, keepdims=keepdims)), (x,), backward, "sum")


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        count = x.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        count = int(np.prod([x.shape[a] for a in axes]))
    shape = x.shape

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / count, shape),)

    return Tensor.make(np.asarray(x.data.mean(axis=axis, keepdims=keepdims)), (x,), backward, "mean")


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    old = x.shape
    return Tensor.make(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),), "reshape")


def transpose(x: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes) if axes else tuple(reversed(range(x.ndim)))
    inv = tuple(np.argsort(axes))
    return Tensor.make(x.data.transpose(axes), (x,), lambda g: (g.transpose(inv),), "transpose")


def _is_basic(idx) -> bool:
    parts = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(p, (slice, int, type(None), type(Ellipsis))) for p in parts)


def index(x: Tensor, idx) -> Tensor:
    shape = x.shape
    basic = _is_basic(idx)

    def backward(g):
        out = np.zeros(shape)
        if basic:
            out[idx] = g
        else:
            np.add.at(out, idx, g)
        return (out,)

    return Tensor.make(np.array(x.data[idx]), (x,), backward, "index")


def concat(xs: Sequence[Tensor], axis: int = 1) -> Tensor:
    xs = [as_tensor(t) for t in xs]
    sizes = [t.shape[axis] for t in xs]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    try:
        data = np.concatenate([t.data for t in xs], axis=axis)
    except ValueError as exc:
        raise ShapeError(f"concat: {exc}") from None
    return Tensor.make(data, xs, backward, "concat")


def concat_channels(xs: Sequence[Tensor]) -> Tensor:
    """Stack rank-4 tensors along channels; N, H, W must agree."""
    ref = xs[0].shape
    for t in xs[1:]:
        if t.ndim != 4 or (t.shape[0], t.shape[2], t.shape[3]) != (ref[0], ref[2], ref[3]):
            raise ShapeError(f"concat_channels: {ref} vs {t.shape}")
    return concat(xs, axis=1)


def split(x: Tensor, sizes: Sequence[int], axis: int = 1) -> list[Tensor]:
    if int(np.sum(sizes)) != x.shape[axis]:
        raise ShapeError(f"split sizes {list(sizes)} do not cover extent {x.shape[axis]}")
    outs = []
    start = 0
    for s in sizes:
        sl = [slice(None)] * x.ndim
        sl[axis] = slice(start, start + s)
        outs.append(index(x, tuple(sl)))
        start += s
    return outs


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    if ad.shape[-1] != bd.shape[-2 if bd.ndim > 1 else 0]:
        raise ShapeError(f"matmul: {ad.shape} @ {bd.shape}")
    out = ad @ bd
    flops.record(2 * out.size * ad.shape[-1])

    def backward(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape)
        if b.requires_grad:
            gb = _unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape)
        return ga, gb

    return Tensor.make(out, (a, b), backward, "matmul")


# ----- convolution -----------------------------------------------------------------


def conv_out_extent(size: int, k: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - k) // stride + 1


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1,
           pad: int = 0, groups: int = 1) -> Tensor:
    """Zero-padded 2-D cross-correlation over an N x C x H x W batch."""
    n, ci, h, w = x.shape
    co, cig, k, k2 = weight.shape
    if k != k2:
        raise ShapeError(f"conv2d needs square kernels, got {k}x{k2}")
    if stride < 1 or pad < 0 or groups < 1:
        raise ShapeError(f"conv2d: invalid stride={stride} pad={pad} groups={groups}")
    if ci % groups or co % groups or cig != ci // groups:
        raise ShapeError(f"conv2d: {ci} input / {co} output channels incompatible with "
                         f"groups={groups} and weight {weight.shape}")
    if k > h + 2 * pad or k > w + 2 * pad:
        raise ShapeError(f"conv2d: kernel {k} exceeds padded input {h + 2 * pad}x{w + 2 * pad}")
    ho, wo = conv_out_extent(h, k, stride, pad), conv_out_extent(w, k, stride, pad)
    hp, wp = h + 2 * pad, w + 2 * pad
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x.data
    cog = co // groups
    flops.record(2 * k * k * cig * co * ho * wo * n)

    if groups == 1:
        cols = [kernels.im2col(xp, k, stride, ho, wo)]
    else:
        cols = [kernels.im2col(xp[:, gi * cig:(gi + 1) * cig], k, stride, ho, wo) for gi in range(groups)]
    wmats = [weight.data[gi * cog:(gi + 1) * cog].reshape(cog, -1) for gi in range(groups)]
    outs = [wm @ cm for wm, cm in zip(wmats, cols)]
    out2 = outs[0] if groups == 1 else np.concatenate(outs, axis=0)
    out = np.ascontiguousarray(out2.reshape(co, n, ho, wo).transpose(1, 0, 2, 3))
    if bias is not None:
        out = out + bias.data.reshape(1, co, 1, 1)

    def backward(g):
        g2 = np.ascontiguousarray(g.transpose(1, 0, 2, 3)).reshape(co, n * ho * wo)
        gx = gw = gb = None
        if weight.requires_grad:
            gw = np.concatenate([g2[gi * cog:(gi + 1) * cog] @ cols[gi].T for gi in range(groups)],
                                axis=0).reshape(weight.shape)
        if x.requires_grad:
            parts = [kernels.col2im(wmats[gi].T @ g2[gi * cog:(gi + 1) * cog], n, cig, hp, wp, k,
                                    stride, ho, wo) for gi in range(groups)]
            gxp = parts[0] if groups == 1 else np.concatenate(parts, axis=1)
            gx = gxp[:, :, pad:pad + h, pad:pad + w] if pad else gxp
        if bias is not None and bias.requires_grad:
            gb = g.sum(axis=(0, 2, 3))
        return (gx, gw) if bias is None else (gx, gw, gb)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return Tensor.make(out, parents, backward, "conv2d")


# ----- pooling -----------------------------------------------------------------------


def _check_spatial(x: Tensor, what: str) -> None:
    if x.ndim != 4 or x.shape[2] < 1 or x.shape[3] < 1:
        raise ShapeError(f"{what} needs a non-empty N x C x H x W tensor, got {x.shape}")


def global_avg_pool2d(x: Tensor) -> Tensor:
    """Per-channel mean over all spatial positions -> N x C x 1 x 1."""
    _check_spatial(x, "global_avg_pool2d")
    return mean(x, axis=(2, 3), keepdims=True)


def avg_pool_rows(x: Tensor) -> Tensor:
    """Average each row over the width axis -> N x C x H x 1."""
    _check_spatial(x, "avg_pool_rows")
    return mean(x, axis=3, keepdims=True)


def avg_pool_cols(x: Tensor) -> Tensor:
    """Average each column over the height axis -> N x C x 1 x W."""
    _check_spatial(x, "avg_pool_cols")
    return mean(x, axis=2, keepdims=True)


# ----- normalisation ---------------------------------------------------------------------


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, running_mean: np.ndarray,
               running_var: np.ndarray, training: bool, momentum: float = BN_MOMENTUM,
               eps: float = BN_EPS) -> Tensor:
    """Per-channel normalisation over N x H x W.

    In training mode running statistics are updated in place with the
    unbiased batch variance.
    """
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"batch_norm: affine params {gamma.shape} do not match {c} channels")
    xd = x.data
    if training:
        mu = xd.mean(axis=(0, 2, 3))
        var = xd.var(axis=(0, 2, 3))
        m = xd.size // c
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu
        running_var *= 1.0 - momentum
        running_var += momentum * var * (m / max(m - 1, 1))
    else:
        mu, var = running_mean.copy(), running_var.copy()
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (xd - mu.reshape(1, c, 1, 1)) * inv.reshape(1, c, 1, 1)
    out = xhat * gamma.data.reshape(1, c, 1, 1) + beta.data.reshape(1, c, 1, 1)

    def backward(g):
        gg = g * gamma.data.reshape(1, c, 1, 1)
        if training:
            m = xd.size // c
            gx = (inv.reshape(1, c, 1, 1) / m) * (
                m * gg - gg.sum(axis=(0, 2, 3), keepdims=True)
                - xhat * (gg * xhat).sum(axis=(0, 2, 3), keepdims=True))
        else:
            gx = gg * inv.reshape(1, c, 1, 1)
        return gx, (g * xhat).sum(axis=(0, 2, 3)), g.sum(axis=(0, 2, 3))

    return Tensor.make(out, (x, gamma, beta), backward, "batch_norm")


def group_norm(x: Tensor, n_groups: int, gamma: Tensor, beta: Tensor, eps: float = BN_EPS) -> Tensor:
    """Normalise each (sample, channel group) over its channels and positions."""
    n, c, h, w = x.shape
    if n_groups < 1 or c % n_groups:
        raise ShapeError(f"group_norm: {c} channels not divisible into {n_groups} groups")
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"group_norm: affine params {gamma.shape} do not match {c} channels")
    xg = x.data.reshape(n, n_groups, -1)
    mu = xg.mean(axis=2, keepdims=True)
    var = xg.var(axis=2, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = ((xg - mu) * inv).reshape(n, c, h, w)
    out = xhat * gamma.data.reshape(1, c, 1, 1) + beta.data.reshape(1, c, 1, 1)
    m = xg.shape[2]

    def backward(g):
        gg = (g * gamma.data.reshape(1, c, 1, 1)).reshape(n, n_groups, -1)
        xh = xhat.reshape(n, n_groups, -1)
        gx = (inv / m) * (m * gg - gg.sum(axis=2, keepdims=True)
                          - xh * (gg * xh).sum(axis=2, keepdims=True))
        return gx.reshape(n, c, h, w), (g * xhat).sum(axis=(0, 2, 3)), g.sum(axis=(0, 2, 3))

    return Tensor.make(out, (x, gamma, beta), backward, "group_norm")


# ----- resampling ------------------------------------------------------------------------


def nearest_upsample(x: Tensor, factor: int) -> Tensor:
    n, c, h, w = x.shape
    f = int(factor)
    out = np.broadcast_to(x.data[:, :, :, None, :, None], (n, c, h, f, w, f)).reshape(n, c, h * f, w * f)

    def backward(g):
        return (g.reshape(n, c, h, f, w, f).sum(axis=(3, 5)),)

    return Tensor.make(out, (x,), backward, "nearest_upsample")


def pixel_shuffle(x: Tensor, factor: int) -> Tensor:
    """N x (C*s*s) x H x W -> N x C x sH x sW; channel c*s*s + dy*s + dx -> (c, s*y+dy, s*x+dx)."""
    n, cs, h, w = x.shape
    s = int(factor)
    if cs % (s * s):
        raise ShapeError(f"pixel_shuffle: {cs} channels not divisible by {s}^2")
    c = cs // (s * s)
    out = x.data.reshape(n, c, s, s, h, w).transpose(0, 1, 4, 2, 5, 3).reshape(n, c, h * s, w * s)

    def backward(g):
        return (g.reshape(n, c, h, s, w, s).transpose(0, 1, 3, 5, 2, 4).reshape(n, cs, h, w),)

    return Tensor.make(out, (x,), backward, "pixel_shuffle")


def carafe_reassemble(x: Tensor, kernels_t: Tensor, k_up: int, sigma: int) -> Tensor:
    """Weighted sum over each output position's k_up x k_up source neighbourhood."""
    n, c, h, w = x.shape
    if kernels_t.shape != (n, k_up * k_up, sigma * h, sigma * w):
        raise ShapeError(f"reassemble: kernels {kernels_t.shape} do not match input {x.shape} "
                         f"with k_up={k_up}, sigma={sigma}")
    r = k_up // 2
    xp = np.pad(x.data, ((0, 0), (0, 0), (r, r), (r, r)))
    kd = kernels_t.data
    out = kernels.carafe_forward(xp, kd, k_up, sigma)
    flops.record(2 * n * c * k_up * k_up * sigma * sigma * h * w)

    def backward(g):
        dxp, dk = kernels.carafe_backward(xp, kd, g, k_up, sigma)
        return dxp[:, :, r:r + h, r:r + w], dk

    return Tensor.make(out, (x, kernels_t), backward, "carafe_reassemble")


__all__ = [
    "add", "sub", "mul", "div", "power", "exp", "log", "maximum", "minimum",
    "sigmoid", "silu", "relu", "softplus", "softmax", "bce_with_logits",
    "sum", "mean", "reshape", "transpose", "index", "concat", "concat_channels", "split",
    "matmul", "conv2d", "conv_out_extent", "global_avg_pool2d", "avg_pool_rows", "avg_pool_cols",
    "batch_norm", "group_norm", "nearest_upsample", "pixel_shuffle", "carafe_reassemble",
    "check_same_shape",
]
