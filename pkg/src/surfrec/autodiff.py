"""Minimal reverse-mode automatic differentiation over dense numpy arrays.

Array-valued tape autodiff: every op runs vectorized on numpy, records its
parents and a backward closure, and ``backward()`` walks the tape in
reverse topological order. Float32 is the training dtype; ops preserve the
input dtype, so float64 tensors can be used where tests need exactness.
Reductions accumulate in float64 regardless of storage dtype.
"""

from __future__ import annotations

from contextlib import contextmanager

import numpy as np
from scipy.special import expit

_GRAD_ENABLED = True


@contextmanager
def no_grad():
    """Disable graph recording inside the block (forward-only evaluation)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def grad_enabled():
    return _GRAD_ENABLED


class Tensor:
    """Dense array with an optional gradient buffer and tape linkage."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn", "_consumed")

    # make numpy defer to our reflected operators
    __array_ufunc__ = None
    __array_priority__ = 1000

    def __init__(self, data, requires_grad=False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward_fn = None
        self._consumed = False

    # -- introspection ----------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else self.data.item()

    def numpy(self):
        return self.data

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, grad={'set' if self.grad is not None else 'none'})"

    def _tracked(self):
        return self.requires_grad or self._backward_fn is not None

    def detach(self):
        """Return a view of the same data with no tape linkage."""
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    # -- operator sugar ----------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return _basic_index(self, key)

    def reshape(self, *shape):
        return reshape(self, *shape)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)


def as_tensor(x, like=None):
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype))


def _unbroadcast(grad, shape):
    """Reduce `grad` back to `shape` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _make(data, parents, backward_fn):
    out = Tensor(data)
    if _GRAD_ENABLED and any(p._tracked() for p in parents):
        out._parents = tuple(parents)
        out._backward_fn = backward_fn
    return out


# -- elementwise binary ------------------------------------------------------

def add(a, b):
    a, b = as_tensor(a), as_tensor(b, like=a)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(a.data + b.data, (a, b), bw)


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b, like=a)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make(a.data - b.data, (a, b), bw)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b, like=a)

    def bw(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make(a.data * b.data, (a, b), bw)


def div(a, b):
    a, b = as_tensor(a), as_tensor(b, like=a)

    def bw(g):
        ga = g / b.data
        gb = -g * a.data / (b.data * b.data)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _make(a.data / b.data, (a, b), bw)


def maximum(a, b):
    """Elementwise max; on ties the gradient goes to the first argument."""
    a, b = as_tensor(a), as_tensor(b, like=a)
    mask = a.data >= b.data

    def bw(g):
        return _unbroadcast(g * mask, a.shape), _unbroadcast(g * ~mask, b.shape)

    return _make(np.maximum(a.data, b.data), (a, b), bw)


def minimum(a, b):
    a, b = as_tensor(a), as_tensor(b, like=a)
    mask = a.data <= b.data

    def bw(g):
        return _unbroadcast(g * mask, a.shape), _unbroadcast(g * ~mask, b.shape)

    return _make(np.minimum(a.data, b.data), (a, b), bw)


# -- elementwise unary -------------------------------------------------------

def neg(a):
    a = as_tensor(a)
    return _make(-a.data, (a,), lambda g: (-g,))


def power(a, p):
    a = as_tensor(a)
    p = float(p)
    out = a.data**p

    def bw(g):
        return (g * p * a.data ** (p - 1.0),)

    return _make(out, (a,), bw)


def exp(a):
    a = as_tensor(a)
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,))


def expm1(a):
    a = as_tensor(a)
    out = np.expm1(a.data)
    return _make(out, (a,), lambda g: (g * (out + 1.0),))


def log(a):
    a = as_tensor(a)
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,))


def sqrt(a):
    a = as_tensor(a)
    out = np.sqrt(a.data)
    return _make(out, (a,), lambda g: (g * (0.5 / out),))


def absolute(a):
    a = as_tensor(a)
    sign = np.sign(a.data)
    return _make(np.abs(a.data), (a,), lambda g: (g * sign,))


def sin(a):
    a = as_tensor(a)
    return _make(np.sin(a.data), (a,), lambda g: (g * np.cos(a.data),))


def cos(a):
    a = as_tensor(a)
    return _make(np.cos(a.data), (a,), lambda g: (g * -np.sin(a.data),))


def relu(a):
    a = as_tensor(a)
    mask = a.data > 0
    return _make(a.data * mask, (a,), lambda g: (g * mask,))


def softplus(a):
    """log(1 + e^x), computed stably; derivative is sigmoid(x)."""
    a = as_tensor(a)
    out = np.logaddexp(np.asarray(0.0, dtype=a.dtype), a.data)

    def bw(g):
        return (g * expit(a.data),)

    return _make(out, (a,), bw)


def sigmoid(a):
    a = as_tensor(a)
    out = expit(a.data)
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),))


# -- shape / indexing --------------------------------------------------------

def reshape(a, *shape):
    a = as_tensor(a)
    if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
        shape = tuple(shape[0])
    old = a.shape
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def concatenate(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), bw)


def gather(a, idx):
    """Rows of `a` selected by integer array `idx` (any shape).

    Output shape is idx.shape + a.shape[1:]. Backward scatter-adds, which is
    deterministic for repeated indices.
    """
    a = as_tensor(a)
    idx = np.asarray(idx)
    shape = a.shape

    def bw(g):
        ga = np.zeros(shape, dtype=g.dtype)
        np.add.at(ga, idx, g)
        return (ga,)

    return _make(a.data[idx], (a,), bw)


def _basic_index(a, key):
    a = as_tensor(a)
    shape = a.shape

    def bw(g):
        ga = np.zeros(shape, dtype=g.dtype)
        ga[key] += g
        return (ga,)

    return _make(a.data[key], (a,), bw)


# -- reductions / linear algebra --------------------------------------------

def tsum(a, axis=None, keepdims=False):
    """Sum with float64 accumulation, result cast back to the input dtype."""
    a = as_tensor(a)
    out = np.sum(a.data, axis=axis, keepdims=keepdims, dtype=np.float64).astype(a.dtype)
    shape = a.shape

    def bw(g):
        if axis is None:
            return (np.broadcast_to(g, shape).astype(g.dtype, copy=True),)
        g2 = g
        if not keepdims:
            g2 = np.expand_dims(g, axis=axis)
        return (np.broadcast_to(g2, shape).astype(g2.dtype, copy=True),)

    return _make(out, (a,), bw)


def tmean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    if axis is None:
        n = a.size
    elif isinstance(axis, tuple):
        n = int(np.prod([a.shape[ax] for ax in axis]))
    else:
        n = a.shape[axis]
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError(f"matmul expects 2-D operands, got {a.shape} @ {b.shape}")

    def bw(g):
        return g @ b.data.T, a.data.T @ g

    return _make(a.data @ b.data, (a, b), bw)


def cumprod(a, axis=-1):
    """Cumulative product along `axis`; inputs must be nonzero for backward."""
    a = as_tensor(a)
    out = np.cumprod(a.data, axis=axis)

    def bw(g):
        # d(out_k)/d(a_i) = out_k / a_i for i <= k; safe because inputs are
        # clamped away from zero by callers (asserted here).
        if np.any(a.data == 0):
            raise ValueError("cumprod backward requires nonzero inputs")
        s = np.flip(np.cumsum(np.flip(g * out, axis=axis), axis=axis), axis=axis)
        return (s / a.data,)

    return _make(out, (a,), bw)


# -- backward ---------------------------------------------------------------

def backward(loss):
    """Reverse-mode sweep from scalar `loss`; accumulates into `.grad`.

    Parameter gradients accumulate across calls (for chunked batches); clear
    them with ParameterStore.zero_grad. The traversed graph is consumed: a
    second backward through the same loss raises.
    """
    if not isinstance(loss, Tensor):
        raise TypeError("backward expects a Tensor")
    if loss._consumed:
        raise RuntimeError("backward called twice on the same graph; re-run the forward pass")
    if loss.data.size != 1:
        raise ValueError(f"backward requires a scalar loss, got shape {loss.shape}")
    if not loss._tracked():
        raise RuntimeError("loss is not connected to any tracked tensor")

    topo = []
    visited = set()
    stack = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited:
                stack.append((p, False))

    loss.grad = np.ones_like(loss.data)
    for node in reversed(topo):
        if node._backward_fn is None or node.grad is None:
            continue
        grads = node._backward_fn(node.grad)
        for parent, g in zip(node._parents, grads):
            if g is None or not parent._tracked():
                continue
            g = g.astype(parent.dtype, copy=False)
            if parent.grad is None:
                parent.grad = g.copy() if g.base is not None or g is parent.data else g
            else:
                parent.grad = parent.grad + g

    # free the graph and forbid a second sweep
    for node in topo:
        if node._backward_fn is not None:
            node._parents = ()
            node._backward_fn = None
            node._consumed = True
        if node is not loss and not node.requires_grad:
            node.grad = None


def check_finite(t, context=""):
    """Raise if `t` contains NaN/Inf; used at layer and loss boundaries."""
    data = t.data if isinstance(t, Tensor) else np.asarray(t)
    if not np.all(np.isfinite(data)):
        raise FloatingPointError(f"non-finite values detected{': ' + context if context else ''}")
    return t
