"""Compare the compiled extension kernels against the pure-numpy fallbacks.

Run:  python3 benchmarks/bench_backends.py
"""

import time

import numpy as np

from asymloc import _pure
from asymloc.backend import BACKEND

try:
    from asymloc import _kernels
except ImportError:
    _kernels = None


def bench(label, fn, *args, repeats=5):
    fn(*args)  # warm-up
    best = min(timeit(fn, *args) for _ in range(repeats))
    print(f"  {label:10s} {best * 1e3:8.3f} ms")
    return best


def timeit(fn, *args):
    t0 = time.perf_counter()
    fn(*args)
    return time.perf_counter() - t0


def main():
    rng = np.random.default_rng(0)
    print(f"active backend: {BACKEND}")
    if _kernels is None:
        print("compiled extension unavailable; nothing to compare")
        return

    img = rng.random((32, 160, 160), dtype=np.float32)
    cols = _pure.im2col(img, 3, 1, 1)
    scores = rng.random((160, 160), dtype=np.float32)
    warp_h = np.ascontiguousarray([[1.01, 0.02, -1.5], [-0.01, 0.99, 2.0],
                                   [1e-5, -1e-5, 1.0]], dtype=np.float64)

    cases = [
        ("im2col", lambda m: m.im2col(img, 3, 1, 1)),
        ("col2im", lambda m: m.col2im(cols, 32, 160, 160, 3, 1, 1)),
        ("nms_mask", lambda m: m.nms_mask(scores, 2)),
        ("warp", lambda m: m.warp_bilinear(scores, warp_h, 160, 160)),
    ]
    for name, call in cases:
        print(name)
        t_pure = bench("pure", call, _pure)
        t_comp = bench("compiled", call, _kernels)
        print(f"  speedup    {t_pure / t_comp:8.2f}x")


if __name__ == "__main__":
    main()
