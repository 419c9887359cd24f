# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels: conv unfolding, NMS, bilinear warping.

Each routine mirrors its pure numpy twin in ``_pure.py`` with identical
floating-point operation order, so the two backends produce bit-identical
results.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport floor

ctypedef fused floating:
    float
    double


def im2col(floating[:, :, ::1] x, int k, int stride, int pad):
    cdef int c = x.shape[0], h = x.shape[1], w = x.shape[2]
    cdef int ho = (h + 2 * pad - k) // stride + 1
    cdef int wo = (w + 2 * pad - k) // stride + 1
    if floating is float:
        dtype = np.float32
    else:
        dtype = np.float64
    out = np.zeros((c * k * k, ho * wo), dtype=dtype)
    cdef floating[:, ::1] cols = out
    cdef int ci, ki, kj, i, j, y, xx, row
    for ci in range(c):
        for ki in range(k):
            for kj in range(k):
                row = (ci * k + ki) * k + kj
                for i in range(ho):
                    y = i * stride + ki - pad
                    if y < 0 or y >= h:
                        continue
                    for j in range(wo):
                        xx = j * stride + kj - pad
                        if 0 <= xx < w:
                            cols[row, i * wo + j] = x[ci, y, xx]
    return out


def col2im(floating[:, ::1] cols, int c, int h, int w, int k, int stride, int pad):
    cdef int ho = (h + 2 * pad - k) // stride + 1
    cdef int wo = (w + 2 * pad - k) // stride + 1
    if floating is float:
        dtype = np.float32
    else:
        dtype = np.float64
    out = np.zeros((c, h, w), dtype=dtype)
    cdef floating[:, :, ::1] img = out
    cdef int ci, ki, kj, i, j, y, xx, row
    # Accumulation order matches _pure.col2im: ki outer, kj inner, per cell.
    for ci in range(c):
        for ki in range(k):
            for kj in range(k):
                row = (ci * k + ki) * k + kj
                for i in range(ho):
                    y = i * stride + ki - pad
                    if y < 0 or y >= h:
                        continue
                    for j in range(wo):
                        xx = j * stride + kj - pad
                        if 0 <= xx < w:
                            img[ci, y, xx] += cols[row, i * wo + j]
    return out


def nms_mask(floating[:, ::1] scores, int radius):
    cdef int h = scores.shape[0], w = scores.shape[1]
    out = np.zeros((h, w), dtype=bool)
    cdef cnp.uint8_t[:, ::1] mask = out.view(np.uint8)
    cdef int r, c, rr, cc, r0, r1, c0, c1
    cdef floating s
    cdef bint ok
    for r in range(h):
        r0 = r - radius
        if r0 < 0:
            r0 = 0
        r1 = r + radius + 1
        if r1 > h:
            r1 = h
        for c in range(w):
            c0 = c - radius
            if c0 < 0:
                c0 = 0
            c1 = c + radius + 1
            if c1 > w:
                c1 = w
            s = scores[r, c]
            ok = True
            for rr in range(r0, r1):
                if not ok:
                    break
                for cc in range(c0, c1):
                    if rr == r and cc == c:
                        continue
                    if scores[rr, cc] > s:
                        ok = False
                        break
                    if scores[rr, cc] == s and (rr < r or (rr == r and cc < c)):
                        ok = False
                        break
            mask[r, c] = ok
    return out


def warp_bilinear(floating[:, ::1] img, double[:, ::1] h_inv, int out_h, int out_w):
    cdef int h = img.shape[0], w = img.shape[1]
    if floating is float:
        dtype = np.float32
    else:
        dtype = np.float64
    res = np.zeros((out_h, out_w), dtype=dtype)
    cdef floating[:, ::1] out = res
    cdef int r, c, x0, y0, dx, dy, xi, yi
    cdef floating m00, m01, m02, m10, m11, m12, m20, m21, m22
    cdef floating sx, sy, sw, fx, fy, acc, weight, val
    m00 = <floating> h_inv[0, 0]; m01 = <floating> h_inv[0, 1]; m02 = <floating> h_inv[0, 2]
    m10 = <floating> h_inv[1, 0]; m11 = <floating> h_inv[1, 1]; m12 = <floating> h_inv[1, 2]
    m20 = <floating> h_inv[2, 0]; m21 = <floating> h_inv[2, 1]; m22 = <floating> h_inv[2, 2]
    for r in range(out_h):
        for c in range(out_w):
            sw = m20 * c + m21 * r + m22
            if sw == 0:
                continue
            sx = (m00 * c + m01 * r + m02) / sw
            sy = (m10 * c + m11 * r + m12) / sw
            if sx != sx or sy != sy:  # NaN guard
                continue
            x0 = <int> floor(sx)
            y0 = <int> floor(sy)
            fx = sx - <floating> x0
            fy = sy - <floating> y0
            acc = 0
            for dy in range(2):
                for dx in range(2):
                    xi = x0 + dx
                    yi = y0 + dy
                    weight = (fx if dx == 1 else 1 - fx) * (fy if dy == 1 else 1 - fy)
                    if 0 <= xi < w and 0 <= yi < h:
                        val = img[yi, xi]
                    else:
                        val = 0
                    acc += weight * val
            out[r, c] = acc
    return res
