"""Minimal reverse-mode differentiable tensor engine.

Supplies exactly the operations the matching/distillation objectives and the
small CNN backbones need: conv2d, relu/sigmoid, matmul, row L2 normalization,
row/column softmax, gathers, and the usual elementwise arithmetic.  Graphs are
built implicitly through parent links on :class:`Tensor` nodes; calling
:func:`backward` on a scalar loss runs one reverse pass and accumulates
gradients additively into trainable leaves.

Two precision paths are supported: float32 for training/eval and float64 for
finite-difference verification (:func:`finite_difference_check`).
"""

from __future__ import annotations

from contextlib import contextmanager
from typing import Callable, Sequence

import numpy as np

from .backend import col2im, im2col
from .errors import ConfigError, GraphError, ShapeError

LOG_FLOOR = 1e-12


class Tensor:
    """Node in the computation graph.

    ``data`` is a contiguous numpy array (float32 or float64).  Leaves with
    ``requires_grad=True`` are the trainable parameters; everything else is
    produced by the ops below.  Values are retained until backward completes;
    graph tensors must not be mutated in place.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward_fn", "_visited")

    def __init__(self, data, requires_grad: bool = False, _parents=(), _backward_fn=None, _check=True):
        arr = np.asarray(data)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        if _check and not _parents and not np.all(np.isfinite(arr)):
            raise ShapeError("non-finite values rejected at graph boundary")
        self.data = np.ascontiguousarray(arr)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = tuple(_parents)
        self._backward_fn = _backward_fn
        self._visited = False

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def detach(self) -> "Tensor":
        """Constant copy that blocks gradient flow."""
        return Tensor(self.data.copy())

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return add(self, scale(as_tensor(other, self.dtype), -1.0))

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, float(other))
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, grad={self.requires_grad})"


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    arr = np.asarray(x, dtype=dtype if dtype is not None else np.float64)
    return Tensor(arr)


def parameter(data, dtype=np.float32) -> Tensor:
    return Tensor(np.asarray(data, dtype=dtype), requires_grad=True)


def _needs_grad(*tensors: Tensor) -> bool:
    return any(t.requires_grad or t._parents for t in tensors)


_GRAD_ENABLED = True


@contextmanager
def no_grad():
    """Disable graph construction inside the block (pure forward evaluation)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def _make(data, parents, backward_fn):
    if _GRAD_ENABLED and any(p.requires_grad or p._parents for p in parents):
        return Tensor(data, _parents=parents, _backward_fn=backward_fn)
    return Tensor(data, _check=False)


def _accum(t: Tensor, g: np.ndarray):
    if t.requires_grad or t._parents:
        if t.grad is None:
            t.grad = np.zeros_like(t.data)
        t.grad += g


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum gradient over axes that were broadcast in the forward op."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g.astype(g.dtype, copy=False)


# ---------------------------------------------------------------------------
# elementwise ops

def add(a, b) -> Tensor:
    a = as_tensor(a)
    b = as_tensor(b, a.dtype)
    out = a.data + b.data

    def bwd(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(g, b.data.shape))

    return _make(out, (a, b), bwd)


def mul(a: Tensor, b: Tensor) -> Tensor:
    a = as_tensor(a)
    b = as_tensor(b, a.dtype)
    out = a.data * b.data

    def bwd(g):
        _accum(a, _unbroadcast(g * b.data, a.data.shape))
        _accum(b, _unbroadcast(g * a.data, b.data.shape))

    return _make(out, (a, b), bwd)


def scale(a: Tensor, s: float) -> Tensor:
    out = a.data * a.data.dtype.type(s)

    def bwd(g):
        _accum(a, g * a.data.dtype.type(s))

    return _make(out, (a,), bwd)


def activation(kind: str, x: Tensor) -> Tensor:
    """Elementwise relu or sigmoid."""
    if kind == "relu":
        return relu(x)
    if kind == "sigmoid":
        return sigmoid(x)
    raise ConfigError(f"unknown activation kind: {kind!r}")


def relu(x: Tensor) -> Tensor:
    out = np.maximum(x.data, 0)

    def bwd(g):
        _accum(x, g * (x.data > 0))

    return _make(out, (x,), bwd)


def sigmoid(x: Tensor) -> Tensor:
    d = x.data
    out = np.empty_like(d)
    pos = d >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-d[pos]))
    e = np.exp(d[~pos])
    out[~pos] = e / (1.0 + e)

    def bwd(g):
        _accum(x, g * out * (1.0 - out))

    return _make(out, (x,), bwd)


def log_eps(x: Tensor, eps: float = LOG_FLOOR) -> Tensor:
    """log(x + eps); the offset guards underflowing probabilities."""
    shifted = x.data + x.data.dtype.type(eps)
    out = np.log(shifted)

    def bwd(g):
        _accum(x, g / shifted)

    return _make(out, (x,), bwd)


def log_clamped(x: Tensor, floor: float = LOG_FLOOR) -> Tensor:
    """log(max(x, floor)); zero gradient where the floor is active."""
    clamped = np.maximum(x.data, x.data.dtype.type(floor))
    out = np.log(clamped)
    active = x.data > floor

    def bwd(g):
        _accum(x, np.where(active, g / clamped, 0))

    return _make(out, (x,), bwd)


# ---------------------------------------------------------------------------
# reductions and linear algebra

def tsum(x: Tensor) -> Tensor:
    out = np.asarray(x.data.sum(), dtype=x.dtype)

    def bwd(g):
        _accum(x, np.broadcast_to(g, x.data.shape).astype(x.dtype, copy=False))

    return _make(out, (x,), bwd)


def tmean(x: Tensor) -> Tensor:
    n = x.data.size
    out = np.asarray(x.data.mean(), dtype=x.dtype)

    def bwd(g):
        _accum(x, np.broadcast_to(g / n, x.data.shape).astype(x.dtype, copy=False))

    return _make(out, (x,), bwd)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {a.data.shape} x {b.data.shape}")
    out = a.data @ b.data

    def bwd(g):
        _accum(a, g @ b.data.T)
        _accum(b, a.data.T @ g)

    return _make(out, (a, b), bwd)


def transpose(x: Tensor) -> Tensor:
    out = np.ascontiguousarray(x.data.T)

    def bwd(g):
        _accum(x, np.ascontiguousarray(g.T))

    return _make(out, (x,), bwd)


def l2_normalize_rows(x: Tensor, eps: float = 1e-8) -> Tensor:
    """Divide each row by max(||row||_2, eps)."""
    if x.data.ndim != 2:
        raise ShapeError("l2_normalize_rows expects an N x D matrix")
    norms = np.sqrt((x.data * x.data).sum(axis=1, keepdims=True))
    denom = np.maximum(norms, x.data.dtype.type(eps))
    out = x.data / denom

    def bwd(g):
        live = norms > eps
        # d(x/n)/dx = (g - y (g.y)) / n on the unit-normalized branch
        dot = (g * out).sum(axis=1, keepdims=True)
        gx = np.where(live, (g - out * dot) / denom, g / denom)
        _accum(x, gx.astype(x.dtype, copy=False))

    return _make(out, (x,), bwd)


def _softmax(data: np.ndarray, axis: int) -> np.ndarray:
    shifted = data - data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def _softmax_op(x: Tensor, axis: int) -> Tensor:
    out = _softmax(x.data, axis)

    def bwd(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        _accum(x, (out * (g - dot)).astype(x.dtype, copy=False))

    return _make(out, (x,), bwd)


def softmax_rows(x: Tensor) -> Tensor:
    """Row-wise softmax with log-sum-exp stabilization."""
    return _softmax_op(x, axis=1)


def softmax_cols(x: Tensor) -> Tensor:
    """Column-wise softmax with log-sum-exp stabilization."""
    return _softmax_op(x, axis=0)


# ---------------------------------------------------------------------------
# structural ops

def gather_rows(x: Tensor, idx: np.ndarray) -> Tensor:
    """Select rows idx from an N x D matrix."""
    idx = np.asarray(idx, dtype=np.int64)
    out = x.data[idx]

    def bwd(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, idx, g)
        _accum(x, gx)

    return _make(out, (x,), bwd)


def gather_entries(x: Tensor, rows: np.ndarray, cols: np.ndarray) -> Tensor:
    """Select entries (rows[k], cols[k]) from a matrix into a vector."""
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    out = x.data[rows, cols]

    def bwd(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, (rows, cols), g)
        _accum(x, gx)

    return _make(out, (x,), bwd)


def flatten_spatial(x: Tensor) -> Tensor:
    """Reorder a C x H x W map into an (H*W) x C matrix of per-pixel vectors."""
    c = x.data.shape[0]
    out = np.ascontiguousarray(x.data.reshape(c, -1).T)

    def bwd(g):
        _accum(x, np.ascontiguousarray(g.T).reshape(x.data.shape))

    return _make(out, (x,), bwd)


def conv2d(x: Tensor, kernel: Tensor, bias: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of a C_in x H x W input with C_out x C_in x k x k weights.

    Zero padding, odd kernel sizes only.  Output is C_out x H' x W' with
    H' = floor((H + 2 pad - k) / stride) + 1.
    """
    if x.data.ndim != 3 or kernel.data.ndim != 4:
        raise ShapeError("conv2d expects CHW input and OIkk kernel")
    c_out, c_in, k, k2 = kernel.data.shape
    if k != k2 or k % 2 == 0:
        raise ShapeError("conv2d kernel must be square with odd size")
    if x.data.shape[0] != c_in:
        raise ShapeError(f"conv2d channel mismatch: input {x.data.shape[0]} vs kernel {c_in}")
    if stride < 1 or padding < 0:
        raise ConfigError("conv2d requires stride >= 1 and padding >= 0")
    c, h, w = x.data.shape
    ho = (h + 2 * padding - k) // stride + 1
    wo = (w + 2 * padding - k) // stride + 1
    if ho < 1 or wo < 1:
        raise ShapeError("conv2d output would be empty")

    cols = im2col(x.data, k, stride, padding)
    w2 = kernel.data.reshape(c_out, c_in * k * k)
    out = (w2 @ cols + bias.data[:, None]).reshape(c_out, ho, wo)

    def bwd(g):
        gm = g.reshape(c_out, ho * wo)
        _accum(kernel, (gm @ cols.T).reshape(kernel.data.shape))
        _accum(bias, gm.sum(axis=1))
        if x.requires_grad or x._parents:
            dcols = w2.T @ gm
            _accum(x, col2im(np.ascontiguousarray(dcols), c, h, w, k, stride, padding))

    return _make(out, (x, kernel, bias), bwd)


# ---------------------------------------------------------------------------
# reverse pass

def _topo(loss: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> dict[Tensor, np.ndarray]:
    """Run one reverse pass from a scalar loss.

    Returns gradients for every trainable leaf reached from ``loss``; the same
    arrays are left on ``leaf.grad``.  Calling backward a second time on the
    same forward pass raises :class:`GraphError`.
    """
    if loss.data.size != 1:
        raise GraphError(f"backward requires a scalar loss, got shape {loss.data.shape}")
    if loss._visited:
        raise GraphError("backward already ran for this forward pass")

    order = _topo(loss)
    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        node._visited = True
        if node._backward_fn is not None and node.grad is not None:
            node._backward_fn(node.grad)
    grads = {}
    for node in order:
        if node.requires_grad and not node._parents:
            if node.grad is None:
                node.grad = np.zeros_like(node.data)
            grads[node] = node.grad
    return grads


def zero_grad(params: Sequence[Tensor]):
    for p in params:
        p.grad = None


# ---------------------------------------------------------------------------
# verification oracle

def finite_difference_check(
    fn: Callable[[list[np.ndarray]], tuple[Tensor, list[Tensor]]],
    params: Sequence[np.ndarray],
    h: float = 1e-3,
) -> float:
    """Compare reverse-mode gradients against central finite differences.

    ``fn`` maps a list of float64 parameter arrays to ``(loss, leaves)`` where
    ``loss`` is a scalar graph node and ``leaves`` are the parameter tensors it
    was built from, in the same order.  Returns the max over all parameter
    entries of |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
    """
    if h <= 0:
        raise ConfigError("finite_difference_check requires h > 0")
    params = [np.asarray(p, dtype=np.float64) for p in params]

    loss, leaves = fn([p.copy() for p in params])
    if loss.dtype != np.float64:
        raise ConfigError("finite_difference_check requires float64 evaluation")
    backward(loss)
    analytic = [
        leaf.grad.copy() if leaf.grad is not None else np.zeros_like(leaf.data)
        for leaf in leaves
    ]

    worst = 0.0
    for pi, base in enumerate(params):
        flat = base.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + h
            fp = fn([p.copy() for p in params])[0].item()
            flat[j] = orig - h
            fm = fn([p.copy() for p in params])[0].item()
            flat[j] = orig
            numeric = (fp - fm) / (2.0 * h)
            a = analytic[pi].reshape(-1)[j]
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            worst = max(worst, err)
    return worst
