"""Asymmetric detector-descriptor distillation toolkit.

Train a compact "student" feature network whose keypoints and descriptors
stay compatible with a larger frozen "teacher", match features with
parameter-less mutual nearest neighbors, and evaluate homography-estimation
accuracy and compute cost.
"""

import os as _os
import sys as _sys

# ASYMLOC_THREADS caps BLAS/OpenMP parallelism; it must be exported to the
# thread-pool env vars before numpy first loads to take effect.
_threads = _os.environ.get("ASYMLOC_THREADS")
if _threads and "numpy" not in _sys.modules:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        _os.environ.setdefault(_var, _threads)

from .backend import BACKEND

__version__ = "0.1.0"

__all__ = ["BACKEND", "__version__"]
