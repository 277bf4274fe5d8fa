"""Independent reference implementations used only by the tests."""
from __future__ import annotations

import numpy as np


# ----- EMA, straight-line numpy -------------------------------------------------------------


def _sig(x):
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def _softmax_last(x):
    z = x - x.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _conv_same(x, w, b):
    """Stride-1 'same' convolution as explicit patch matrix times weight matrix."""
    n, c, h, wd = x.shape
    co, _, k, _ = w.shape
    p = k // 2
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    cols = np.empty((c * k * k, n * h * wd))
    r = 0
    for ci in range(c):
        for ky in range(k):
            for kx in range(k):
                cols[r] = xp[:, ci, ky:ky + h, kx:kx + wd].reshape(-1)
                r += 1
    # contiguous result so later reductions sum in row-major order
    out = np.ascontiguousarray((w.reshape(co, -1) @ cols).reshape(co, n, h, wd).transpose(1, 0, 2, 3))
    return out + b.reshape(1, co, 1, 1)


def ema_reference(x, groups, w1, b1, wk, bk, gamma, beta, eps):
    n, c, h, w = x.shape
    cg = c // groups
    gx = x.reshape(n * groups, cg, h, w)
    x_h = gx.mean(axis=3, keepdims=True)
    x_w = gx.mean(axis=2, keepdims=True).transpose(0, 1, 3, 2)
    hw = _conv_same(np.concatenate([x_h, x_w], axis=2), w1, b1)
    a_h, a_w = hw[:, :, :h], hw[:, :, h:]
    gated = gx * _sig(a_h) * _sig(a_w.transpose(0, 1, 3, 2))
    flat = gated.reshape(n * groups, 1, -1)
    mu = flat.mean(axis=2, keepdims=True)
    var = flat.var(axis=2, keepdims=True)
    x1 = ((flat - mu) * (1.0 / np.sqrt(var + eps))).reshape(gated.shape)
    x1 = x1 * gamma.reshape(1, cg, 1, 1) + beta.reshape(1, cg, 1, 1)
    x2 = _conv_same(gx, wk, bk)
    s1 = _softmax_last(x1.mean(axis=(2, 3), keepdims=True).reshape(n * groups, 1, cg))
    s2 = _softmax_last(x2.mean(axis=(2, 3), keepdims=True).reshape(n * groups, 1, cg))
    y = s1 @ x2.reshape(n * groups, cg, h * w) + s2 @ x1.reshape(n * groups, cg, h * w)
    return (gx * _sig(y.reshape(n * groups, 1, h, w))).reshape(n, c, h, w)


# ----- convolution by direct summation ------------------------------------------------------


def conv2d_naive(x, w, b=None, stride=1, pad=0):
    n, c, h, wd = x.shape
    co, _, k, _ = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    ho = (h + 2 * pad - k) // stride + 1
    wo = (wd + 2 * pad - k) // stride + 1
    out = np.zeros((n, co, ho, wo))
    for i in range(ho):
        for j in range(wo):
            patch = xp[:, :, i * stride:i * stride + k, j * stride:j * stride + k]
            out[:, :, i, j] = np.tensordot(patch, w, axes=([1, 2, 3], [1, 2, 3]))
    if b is not None:
        out += b.reshape(1, co, 1, 1)
    return out


# ----- brute-force detection evaluator -------------------------------------------------------


def iou_ref(a, b):
    ix = max(0.0, min(a[2], b[2]) - max(a[0], b[0]))
    iy = max(0.0, min(a[3], b[3]) - max(a[1], b[1]))
    inter = ix * iy
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    return inter / union if union > 0 else 0.0


def brute_ap(scenes, cls, thr):
    """AP of one class by scanning every confidence cut-off from scratch.

    ``scenes`` is a list of (preds, truths); preds are (cls, conf, x1, y1, x2, y2)
    tuples and truths (cls, x1, y1, x2, y2). Greedy matching: highest confidence
    first, each prediction takes the unmatched same-class truth of highest IoU.
    """
    n_truth = sum(1 for _, ts in scenes for t in ts if t[0] == cls)
    if n_truth == 0:
        return 0.0
    labelled = []
    for preds, truths in scenes:
        order = sorted(range(len(preds)), key=lambda i: (-preds[i][1], preds[i][0], *preds[i][2:]))
        used = set()
        for i in order:
            p = preds[i]
            best, best_j = -1.0, None
            for j, t in enumerate(truths):
                if j in used or t[0] != p[0]:
                    continue
                v = iou_ref(p[2:], t[1:])
                if v >= thr and v > best:
                    best, best_j = v, j
            if best_j is not None:
                used.add(best_j)
            if p[0] == cls:
                labelled.append((p[1], best_j is not None))
    if not labelled:
        return 0.0
    cuts = sorted({c for c, _ in labelled}, reverse=True)
    pts = []
    for c in cuts:
        tp = sum(1 for cc, l in labelled if cc >= c and l)
        fp = sum(1 for cc, l in labelled if cc >= c and not l)
        pts.append((tp / n_truth, tp / (tp + fp)))
    ap, prev_r = 0.0, 0.0
    for i, (r, _) in enumerate(pts):
        p_interp = max(pp for rr, pp in pts[i:])
        ap += (r - prev_r) * p_interp
        prev_r = r
    return ap
