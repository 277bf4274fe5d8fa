"""Pure numpy implementations of the hot kernels.

Every function here has a twin with the same signature in ``_ckernels.pyx``.
Inputs are C-contiguous float64 arrays; outputs are freshly allocated.
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import as_strided


def im2col(xp: np.ndarray, k: int, stride: int, ho: int, wo: int) -> np.ndarray:
    """Gather a padded (N, C, Hp, Wp) batch into a (C*k*k, N*ho*wo) matrix."""
    n, c, _, _ = xp.shape
    sn, sc, sh, sw = xp.strides
    view = as_strided(
        xp,
        shape=(c, k, k, n, ho, wo),
        strides=(sc, sh, sw, sn, sh * stride, sw * stride),
        writeable=False,
    )
    return np.ascontiguousarray(view).reshape(c * k * k, n * ho * wo)


def col2im(cols: np.ndarray, n: int, c: int, hp: int, wp: int, k: int, stride: int,
           ho: int, wo: int) -> np.ndarray:
    """Scatter-add the adjoint of :func:`im2col` back into a padded batch."""
    out = np.zeros((n, c, hp, wp))
    cols6 = cols.reshape(c, k, k, n, ho, wo)
    he = stride * (ho - 1) + 1
    we = stride * (wo - 1) + 1
    for ky in range(k):
        for kx in range(k):
            out[:, :, ky:ky + he:stride, kx:kx + we:stride] += cols6[:, ky, kx].transpose(1, 0, 2, 3)
    return out


def carafe_forward(xp: np.ndarray, kernels: np.ndarray, k: int, sigma: int) -> np.ndarray:
    """Content-aware reassembly.

    ``xp`` is the source zero-padded by ``k // 2`` on each side, shape
    (N, C, H + 2r, W + 2r); ``kernels`` is (N, k*k, sigma*H, sigma*W).
    """
    n, c, hp, wp = xp.shape
    r = k // 2
    h, w = hp - 2 * r, wp - 2 * r
    kern6 = kernels.reshape(n, k * k, 1, h, sigma, w, sigma)
    out6 = np.zeros((n, c, h, sigma, w, sigma))
    for t in range(k * k):
        a, b = divmod(t, k)
        src = xp[:, :, a:a + h, b:b + w][:, :, :, None, :, None]
        out6 += kern6[:, t] * src
    return out6.reshape(n, c, h * sigma, w * sigma)


def carafe_backward(xp: np.ndarray, kernels: np.ndarray, gout: np.ndarray, k: int,
                    sigma: int) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of :func:`carafe_forward` w.r.t. the padded source and kernels."""
    n, c, hp, wp = xp.shape
    r = k // 2
    h, w = hp - 2 * r, wp - 2 * r
    kern6 = kernels.reshape(n, k * k, 1, h, sigma, w, sigma)
    g6 = gout.reshape(n, c, h, sigma, w, sigma)
    dxp = np.zeros_like(xp)
    dk = np.empty((n, k * k, h, sigma, w, sigma))
    for t in range(k * k):
        a, b = divmod(t, k)
        src = xp[:, :, a:a + h, b:b + w][:, :, :, None, :, None]
        dk[:, t] = (g6 * src).sum(axis=1)
        dxp[:, :, a:a + h, b:b + w] += (g6 * kern6[:, t]).sum(axis=(3, 5))
    return dxp, dk.reshape(kernels.shape)


def nms_keep(boxes: np.ndarray, classes: np.ndarray, threshold: float) -> np.ndarray:
    """Greedy class-aware suppression over boxes already sorted by priority.

    Returns a uint8 mask; a box is dropped when its IoU with an earlier kept
    box of the same class exceeds ``threshold``.
    """
    m = boxes.shape[0]
    keep = np.ones(m, dtype=np.uint8)
    if m == 0:
        return keep
    x1, y1, x2, y2 = boxes.T
    area = (x2 - x1) * (y2 - y1)
    for i in range(m):
        if not keep[i]:
            continue
        rest = np.arange(i + 1, m)
        rest = rest[(keep[rest] == 1) & (classes[rest] == classes[i])]
        if rest.size == 0:
            continue
        iw = np.minimum(x2[i], x2[rest]) - np.maximum(x1[i], x1[rest])
        ih = np.minimum(y2[i], y2[rest]) - np.maximum(y1[i], y1[rest])
        inter = np.clip(iw, 0.0, None) * np.clip(ih, 0.0, None)
        union = area[i] + area[rest] - inter
        iou = np.divide(inter, union, out=np.zeros_like(inter), where=union > 0)
        keep[rest[iou > threshold]] = 0
    return keep
