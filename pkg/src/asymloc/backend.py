"""Kernel backend selection.

The compiled extension is preferred when importable; setting ASYMLOC_PURE=1
forces the numpy fallback.  ``BACKEND`` names the active implementation.
"""

import os

import numpy as np

from . import _pure

if os.environ.get("ASYMLOC_PURE", "") == "1":
    _impl = _pure
    BACKEND = "pure"
else:
    try:
        from . import _kernels as _impl  # type: ignore[no-redef]

        BACKEND = "compiled"
    except ImportError:
        _impl = _pure
        BACKEND = "pure"


def _as_float(a):
    a = np.ascontiguousarray(a)
    if a.dtype not in (np.float32, np.float64):
        a = a.astype(np.float64)
    return a


def im2col(x, k, stride, pad):
    # Both implementations are bitwise-identical here, and the numpy version
    # (stride-tricks view + one contiguous copy) measures faster than the
    # scalar loop even with the extension built — see benchmarks/.
    return _pure.im2col(_as_float(x), k, stride, pad)


def col2im(cols, c, h, w, k, stride, pad):
    return _pure.col2im(_as_float(cols), c, h, w, k, stride, pad)


def nms_mask(scores, radius):
    return _impl.nms_mask(_as_float(scores), radius)


def warp_bilinear(img, h_inv, out_h, out_w):
    h_inv = np.ascontiguousarray(h_inv, dtype=np.float64)
    return _impl.warp_bilinear(_as_float(img), h_inv, out_h, out_w)
