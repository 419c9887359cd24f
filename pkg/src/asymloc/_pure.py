"""Pure numpy implementations of the hot kernels.

These are the fallback versions of the routines in ``_kernels.pyx``.  The
compiled code mirrors the same operation order, so im2col/col2im/nms agree
bit-for-bit and warp_bilinear agrees to floating-point rounding.  See
``backend.py`` for selection logic and ``benchmarks/bench_backends.py`` for a
speed comparison.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def im2col(x, k, stride, pad):
    """Unfold a C x H x W array into a (C*k*k) x (Ho*Wo) patch matrix.

    Row order is (c, ki, kj); column order is row-major over output pixels.
    """
    c, h, w = x.shape
    if pad > 0:
        x = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
    win = sliding_window_view(x, (k, k), axis=(1, 2))  # C, Ho*, Wo*, k, k
    win = win[:, ::stride, ::stride]
    ho, wo = win.shape[1], win.shape[2]
    cols = win.transpose(0, 3, 4, 1, 2).reshape(c * k * k, ho * wo)
    return np.ascontiguousarray(cols)


def col2im(cols, c, h, w, k, stride, pad):
    """Fold a patch matrix back into a C x H x W array, summing overlaps."""
    ho = (h + 2 * pad - k) // stride + 1
    wo = (w + 2 * pad - k) // stride + 1
    padded = np.zeros((c, h + 2 * pad, w + 2 * pad), dtype=cols.dtype)
    patches = cols.reshape(c, k, k, ho, wo)
    for ki in range(k):
        for kj in range(k):
            padded[:, ki:ki + stride * ho:stride, kj:kj + stride * wo:stride] += patches[:, ki, kj]
    if pad > 0:
        return np.ascontiguousarray(padded[:, pad:-pad, pad:-pad])
    return padded


def nms_mask(scores, radius):
    """Boolean mask of local maxima within a (2*radius+1)^2 Chebyshev window.

    A cell survives iff no window neighbour has a strictly larger score and no
    row-major-earlier neighbour has an equal score (first of equals wins).
    """
    h, w = scores.shape
    size = 2 * radius + 1
    from scipy.ndimage import maximum_filter

    wmax = maximum_filter(scores, size=size, mode="constant", cval=-np.inf)
    mask = scores >= wmax
    out = np.zeros((h, w), dtype=bool)
    for r, c in zip(*np.nonzero(mask)):
        s = scores[r, c]
        ok = True
        for rr in range(max(0, r - radius), min(h, r + radius + 1)):
            if not ok:
                break
            for cc in range(max(0, c - radius), min(w, c + radius + 1)):
                if (rr, cc) == (r, c):
                    continue
                if scores[rr, cc] == s and (rr < r or (rr == r and cc < c)):
                    ok = False
                    break
        out[r, c] = ok
    return out


def warp_bilinear(img, h_inv, out_h, out_w):
    """Inverse-warp an H x W image through h_inv with bilinear sampling.

    Output pixel (r, c) samples the source at h_inv @ (c, r, 1); samples
    falling outside the source frame contribute zero.
    """
    h, w = img.shape
    cc, rr = np.meshgrid(np.arange(out_w, dtype=img.dtype), np.arange(out_h, dtype=img.dtype))
    ones = np.ones_like(cc)
    pts = np.stack([cc.ravel(), rr.ravel(), ones.ravel()])
    src = h_inv.astype(img.dtype) @ pts
    with np.errstate(divide="ignore", invalid="ignore"):
        sx = src[0] / src[2]
        sy = src[1] / src[2]
    bad = ~np.isfinite(sx) | ~np.isfinite(sy)
    sx = np.where(bad, -1.0, sx)
    sy = np.where(bad, -1.0, sy)

    x0 = np.floor(sx).astype(np.int64)
    y0 = np.floor(sy).astype(np.int64)
    fx = sx - x0
    fy = sy - y0

    out = np.zeros(out_h * out_w, dtype=img.dtype)
    for dy in (0, 1):
        for dx in (0, 1):
            xi = x0 + dx
            yi = y0 + dy
            inside = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
            weight = np.where(dx == 1, fx, 1 - fx) * np.where(dy == 1, fy, 1 - fy)
            vals = np.zeros_like(out)
            vals[inside] = img[yi[inside], xi[inside]]
            out += weight * vals
    return out.reshape(out_h, out_w)
