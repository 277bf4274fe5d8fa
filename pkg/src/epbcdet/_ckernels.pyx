# cython: language_level=3
"""Compiled twins of the kernels in ``_pykernels``.

Signatures and output layouts match the numpy versions exactly; the
accumulation order inside each output element follows the same tap order.
"""
import numpy as np

cimport numpy as cnp

cnp.import_array()


def im2col(const double[:, :, :, ::1] xp, int k, int stride, int ho, int wo):
    cdef Py_ssize_t n = xp.shape[0], c = xp.shape[1]
    out = np.empty((c * k * k, n * ho * wo), dtype=np.float64)
    cdef double[:, ::1] o = out
    cdef Py_ssize_t ci, ky, kx, b, oy, ox, row, col
    for ci in range(c):
        for ky in range(k):
            for kx in range(k):
                row = (ci * k + ky) * k + kx
                col = 0
                for b in range(n):
                    for oy in range(ho):
                        for ox in range(wo):
                            o[row, col] = xp[b, ci, oy * stride + ky, ox * stride + kx]
                            col += 1
    return out


def col2im(const double[:, ::1] cols, int n, int c, int hp, int wp, int k, int stride,
           int ho, int wo):
    out = np.zeros((n, c, hp, wp), dtype=np.float64)
    cdef double[:, :, :, ::1] o = out
    cdef Py_ssize_t ci, ky, kx, b, oy, ox, row, col
    for ky in range(k):
        for kx in range(k):
            for ci in range(c):
                row = (ci * k + ky) * k + kx
                col = 0
                for b in range(n):
                    for oy in range(ho):
                        for ox in range(wo):
                            o[b, ci, oy * stride + ky, ox * stride + kx] += cols[row, col]
                            col += 1
    return out


def carafe_forward(const double[:, :, :, ::1] xp, const double[:, :, :, ::1] kernels,
                   int k, int sigma):
    cdef Py_ssize_t n = xp.shape[0], c = xp.shape[1]
    cdef Py_ssize_t r = k // 2
    cdef Py_ssize_t h = xp.shape[2] - 2 * r, w = xp.shape[3] - 2 * r
    cdef Py_ssize_t oh = h * sigma, ow = w * sigma
    out = np.empty((n, c, oh, ow), dtype=np.float64)
    cdef double[:, :, :, ::1] o = out
    cdef Py_ssize_t b, ci, oy, ox, sy, sx, t, a, bb
    cdef double acc
    for b in range(n):
        for ci in range(c):
            for oy in range(oh):
                sy = oy // sigma
                for ox in range(ow):
                    sx = ox // sigma
                    acc = 0.0
                    for t in range(k * k):
                        a = t // k
                        bb = t - a * k
                        acc = acc + kernels[b, t, oy, ox] * xp[b, ci, sy + a, sx + bb]
                    o[b, ci, oy, ox] = acc
    return out


def carafe_backward(const double[:, :, :, ::1] xp, const double[:, :, :, ::1] kernels,
                    const double[:, :, :, ::1] gout, int k, int sigma):
    cdef Py_ssize_t n = xp.shape[0], c = xp.shape[1]
    cdef Py_ssize_t r = k // 2
    cdef Py_ssize_t h = xp.shape[2] - 2 * r, w = xp.shape[3] - 2 * r
    cdef Py_ssize_t oh = h * sigma, ow = w * sigma
    dxp_arr = np.zeros((n, c, xp.shape[2], xp.shape[3]), dtype=np.float64)
    dk_arr = np.zeros((n, k * k, oh, ow), dtype=np.float64)
    cdef double[:, :, :, ::1] dxp = dxp_arr
    cdef double[:, :, :, ::1] dk = dk_arr
    cdef Py_ssize_t b, ci, oy, ox, sy, sx, t, a, bb
    cdef double g
    for b in range(n):
        for ci in range(c):
            for oy in range(oh):
                sy = oy // sigma
                for ox in range(ow):
                    sx = ox // sigma
                    g = gout[b, ci, oy, ox]
                    for t in range(k * k):
                        a = t // k
                        bb = t - a * k
                        dk[b, t, oy, ox] += g * xp[b, ci, sy + a, sx + bb]
                        dxp[b, ci, sy + a, sx + bb] += g * kernels[b, t, oy, ox]
    return dxp_arr, dk_arr


def nms_keep(const double[:, ::1] boxes, const long[::1] classes, double threshold):
    cdef Py_ssize_t m = boxes.shape[0]
    keep_arr = np.ones(m, dtype=np.uint8)
    cdef unsigned char[::1] keep = keep_arr
    cdef Py_ssize_t i, j
    cdef double iw, ih, inter, union, ai, aj
    for i in range(m):
        if not keep[i]:
            continue
        ai = (boxes[i, 2] - boxes[i, 0]) * (boxes[i, 3] - boxes[i, 1])
        for j in range(i + 1, m):
            if not keep[j] or classes[j] != classes[i]:
                continue
            iw = min(boxes[i, 2], boxes[j, 2]) - max(boxes[i, 0], boxes[j, 0])
            ih = min(boxes[i, 3], boxes[j, 3]) - max(boxes[i, 1], boxes[j, 1])
            if iw <= 0.0 or ih <= 0.0:
                continue
            inter = iw * ih
            aj = (boxes[j, 2] - boxes[j, 0]) * (boxes[j, 3] - boxes[j, 1])
            union = ai + aj - inter
            if union > 0.0 and inter / union > threshold:
                keep[j] = 0
    return keep_arr
