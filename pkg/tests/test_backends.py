"""Compiled-vs-pure kernel agreement and backend selection."""

import os
import subprocess
import sys

import numpy as np
import pytest

from asymloc import _pure
from asymloc import backend

kernels = pytest.importorskip("asymloc._kernels")


@pytest.mark.parametrize("dtype", [np.float32, np.float64])
@pytest.mark.parametrize("k,stride,pad", [(3, 1, 1), (3, 2, 1), (1, 1, 0), (5, 2, 2)])
def test_im2col_bitwise_equal(dtype, k, stride, pad):
    rng = np.random.default_rng(0)
    x = rng.standard_normal((4, 17, 13)).astype(dtype)
    a = _pure.im2col(x, k, stride, pad)
    b = kernels.im2col(x, k, stride, pad)
    assert a.dtype == b.dtype
    assert np.array_equal(a, b)


@pytest.mark.parametrize("dtype", [np.float32, np.float64])
@pytest.mark.parametrize("k,stride,pad", [(3, 1, 1), (3, 2, 1), (1, 1, 0)])
def test_col2im_bitwise_equal(dtype, k, stride, pad):
    rng = np.random.default_rng(1)
    c, h, w = 3, 11, 9
    out_h = (h + 2 * pad - k) // stride + 1
    out_w = (w + 2 * pad - k) // stride + 1
    cols = rng.standard_normal((c * k * k, out_h * out_w)).astype(dtype)
    a = _pure.col2im(cols, c, h, w, k, stride, pad)
    b = kernels.col2im(cols, c, h, w, k, stride, pad)
    assert np.array_equal(a, b)


@pytest.mark.parametrize("radius", [1, 2, 3])
def test_nms_bitwise_equal(radius):
    rng = np.random.default_rng(2)
    scores = rng.random((40, 33)).astype(np.float32)
    # inject plateaus to exercise the first-of-equals tie rule
    scores[5:8, 5:8] = 0.75
    a = _pure.nms_mask(scores, radius)
    b = kernels.nms_mask(scores, radius)
    assert np.array_equal(a, b)


def test_warp_close():
    rng = np.random.default_rng(3)
    img = rng.random((50, 60)).astype(np.float32)
    h_inv = np.array([[1.02, 0.01, -2.0], [-0.02, 0.97, 1.5], [1e-4, -1e-4, 1.0]])
    a = _pure.warp_bilinear(img, h_inv, 50, 60)
    b = kernels.warp_bilinear(img, np.ascontiguousarray(h_inv), 50, 60)
    assert np.max(np.abs(a - b)) < 1e-5


def test_pure_env_forces_fallback():
    code = "import asymloc; print(asymloc.BACKEND)"
    env = dict(os.environ, ASYMLOC_PURE="1")
    out = subprocess.run([sys.executable, "-c", code], env=env,
                         capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "pure"


def test_default_backend_is_compiled_when_available():
    assert backend.BACKEND == "compiled"
