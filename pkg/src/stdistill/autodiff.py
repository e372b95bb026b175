"""Define-by-run reverse-mode autodiff over dense numpy arrays.

Only the operations the forecasting models need are provided. Every op
records a closure on the output tensor that maps the output gradient to
input gradients; :func:`backward` walks the resulting graph in reverse
topological order.
"""
from __future__ import annotations

import contextlib
import os
from typing import Callable, Iterable, Sequence

import numpy as np
import scipy.sparse as sp

DEBUG = bool(os.environ.get("STDISTILL_DEBUG"))

_grad_enabled = True


class ShapeError(ValueError):
    pass


@contextlib.contextmanager
def no_grad():
    """Disable taping inside the block (inference mode)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def is_grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "op")

    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad = None
        self._parents: tuple = ()
        self._backward: Callable | None = None
        self.op = "leaf"

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    @property
    def T(self):
        return transpose(self, None)


def as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype))


def _make(data: np.ndarray, parents: Sequence[Tensor], backward, op: str) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.op = op
    if DEBUG and all(np.all(np.isfinite(p.data)) for p in parents):
        assert np.all(np.isfinite(data)), f"non-finite output from {op}"
    needs = _grad_enabled and any(p.requires_grad for p in parents)
    out.requires_grad = needs
    if needs:
        out._parents = tuple(parents)
        out._backward = backward
    else:
        out._parents = ()
        out._backward = None
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and grad.shape[i] != 1:
            grad = grad.sum(axis=i, keepdims=True)
    return grad


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    a, b = _pair(a, b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(a.data + b.data, (a, b), bw, "add")


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make(a.data - b.data, (a, b), bw, "sub")


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)

    def bw(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make(a.data * b.data, (a, b), bw, "mul")


def div(a, b) -> Tensor:
    a, b = _pair(a, b)

    def bw(g):
        ga = g / b.data
        gb = -g * a.data / (b.data * b.data)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _make(a.data / b.data, (a, b), bw, "div")


def power(a: Tensor, p: float) -> Tensor:
    def bw(g):
        return (g * p * a.data ** (p - 1),)

    return _make(a.data ** p, (a,), bw, "pow")


def exp(a: Tensor) -> Tensor:
    out_data = np.exp(a.data)

    def bw(g):
        return (g * out_data,)

    return _make(out_data, (a,), bw, "exp")


def log(a: Tensor) -> Tensor:
    def bw(g):
        return (g / a.data,)

    return _make(np.log(a.data), (a,), bw, "log")


def sqrt(a: Tensor) -> Tensor:
    out_data = np.sqrt(a.data)

    def bw(g):
        return (g * 0.5 / out_data,)

    return _make(out_data, (a,), bw, "sqrt")


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0

    def bw(g):
        return (g * mask,)

    return _make(np.where(mask, a.data, 0.0).astype(a.dtype, copy=False), (a,), bw, "relu")


def leaky_relu(a: Tensor, slope: float = 0.01) -> Tensor:
    if not 0.0 < slope < 1.0:
        raise ValueError(f"leaky_relu slope must lie in (0, 1), got {slope}")
    scale = np.where(a.data > 0, a.dtype.type(1.0), a.dtype.type(slope))

    def bw(g):
        return (g * scale,)

    return _make(a.data * scale, (a,), bw, "leaky_relu")


def dropout(a: Tensor, rate: float, training: bool, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout; identity unless ``training`` and ``rate > 0``."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must lie in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return a
    if rng is None:
        raise ValueError("training-mode dropout needs an explicit rng")
    keep = (rng.random(a.shape) >= rate).astype(a.dtype) / (1.0 - rate)

    def bw(g):
        return (g * keep,)

    return _make(a.data * keep, (a,), bw, "dropout")


def activation(x: Tensor, kind: str, *, slope: float = 0.01, rate: float = 0.0,
               training: bool = False, rng=None) -> Tensor:
    if kind == "relu":
        return relu(x)
    if kind == "leaky_relu":
        return leaky_relu(x, slope)
    if kind == "dropout":
        return dropout(x, rate, training, rng)
    raise ValueError(f"unknown activation {kind!r}")


# ---------------------------------------------------------------- reductions / shape

def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape),)

    return _make(np.sum(a.data, axis=axis, keepdims=keepdims), (a,), bw, "sum")


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = a.data.size if axis is None else int(np.prod([a.shape[i] for i in np.atleast_1d(axis)]))
    return tsum(a, axis, keepdims) * (1.0 / n)


def reshape(a: Tensor, shape) -> Tensor:
    def bw(g):
        return (g.reshape(a.shape),)

    return _make(a.data.reshape(shape), (a,), bw, "reshape")


def transpose(a: Tensor, axes=None) -> Tensor:
    inv = None if axes is None else np.argsort(axes)

    def bw(g):
        return (np.transpose(g, inv),)

    return _make(np.ascontiguousarray(np.transpose(a.data, axes)), (a,), bw, "transpose")


def getitem(a: Tensor, idx) -> Tensor:
    def bw(g):
        out = np.zeros_like(a.data)
        np.add.at(out, idx, g)
        return (out,)

    return _make(a.data[idx], (a,), bw, "getitem")


# ---------------------------------------------------------------- linear algebra

def matmul(a, b) -> Tensor:
    a, b = _pair(a, b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs operands of rank >= 2, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} x {b.shape}")

    def bw(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _make(np.matmul(a.data, b.data), (a, b), bw, "matmul")


def propagate(adj, x: Tensor) -> Tensor:
    """Left-multiply the node axis (-2) of ``x`` by a constant adjacency.

    ``adj`` is a dense ndarray or a scipy sparse matrix; it is not
    differentiated. ``x`` has shape ``(..., N, d)``.
    """
    n = x.shape[-2]
    if adj.shape != (n, n):
        raise ShapeError(f"adjacency {adj.shape} does not match node axis of {x.shape}")
    if sp.issparse(adj):
        adj_t = adj.T.tocsr()

        def apply(m, arr):
            # bring the node axis to the front so one sparse product covers all slots
            moved = np.moveaxis(arr, -2, 0)
            flat = moved.reshape(n, -1)
            res = (m @ flat).reshape(moved.shape)
            return np.moveaxis(res, 0, -2)

        out_data = apply(adj, x.data).astype(x.dtype, copy=False)

        def bw(g):
            return (apply(adj_t, g).astype(g.dtype, copy=False),)
    else:
        adj = np.asarray(adj, dtype=x.dtype)
        out_data = np.matmul(adj, x.data)

        def bw(g):
            return (np.matmul(adj.T, g),)

    return _make(out_data, (x,), bw, "propagate")


def conv1d(x: Tensor, kernel: Tensor, bias: Tensor | None = None) -> Tensor:
    """Causal 1-D convolution over axis -2 of ``x`` with shape ``(..., T, d_in)``.

    ``kernel`` has shape ``(f, d_in, d_out)``; tap ``f - 1`` multiplies the
    current step, tap ``k`` the step ``f - 1 - k`` positions earlier. The
    input is left-padded with ``f - 1`` zeros so the output keeps length T.
    """
    f, d_in, d_out = kernel.shape
    T = x.shape[-2]
    if f < 1:
        raise ShapeError("kernel size must be >= 1")
    if x.shape[-1] != d_in:
        raise ShapeError(f"conv1d channels differ: input {x.shape}, kernel {kernel.shape}")
    if f > T + (f - 1):
        raise ShapeError(f"kernel size {f} exceeds padded length {T + f - 1}")
    if bias is not None and bias.shape != (d_out,):
        raise ShapeError(f"conv1d bias must have shape ({d_out},), got {bias.shape}")

    pad = [(0, 0)] * (x.ndim - 2) + [(f - 1, 0), (0, 0)]
    xp = np.pad(x.data, pad)
    # im2col: cols[..., t, k*d_in:(k+1)*d_in] = xp[..., t + k, :]
    cols = np.concatenate([xp[..., k:k + T, :] for k in range(f)], axis=-1)
    kmat = kernel.data.reshape(f * d_in, d_out)
    out = (cols.reshape(-1, f * d_in) @ kmat).reshape(x.shape[:-1] + (d_out,))
    if bias is not None:
        out += bias.data

    parents = (x, kernel) if bias is None else (x, kernel, bias)

    def bw(g):
        gcols = (g.reshape(-1, d_out) @ kmat.T).reshape(cols.shape)
        gxp = np.zeros(xp.shape, dtype=gcols.dtype)
        for k in range(f):
            gxp[..., k:k + T, :] += gcols[..., k * d_in:(k + 1) * d_in]
        lead = g.reshape(-1, d_out)
        gk = (cols.reshape(-1, f * d_in).T @ lead).reshape(kernel.shape)
        grads = (gxp[..., f - 1:, :], gk)
        if bias is not None:
            grads += (lead.sum(axis=0),)
        return grads

    return _make(out, parents, bw, "conv1d")


# ---------------------------------------------------------------- normalisers

def softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - np.max(x.data, axis=axis, keepdims=True)
    e = np.exp(shifted)
    p = e / np.sum(e, axis=axis, keepdims=True)

    def bw(g):
        return (p * (g - np.sum(g * p, axis=axis, keepdims=True)),)

    return _make(p, (x,), bw, "softmax")


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - np.max(x.data, axis=axis, keepdims=True)
    lse = np.log(np.sum(np.exp(shifted), axis=axis, keepdims=True))
    out_data = shifted - lse
    p = np.exp(out_data)

    def bw(g):
        return (g - p * np.sum(g, axis=axis, keepdims=True),)

    return _make(out_data, (x,), bw, "log_softmax")


def logsumexp(x: Tensor, axis: int = -1, mask: np.ndarray | None = None) -> Tensor:
    """log-sum-exp along ``axis``; entries where ``mask`` is False are excluded."""
    data = x.data if mask is None else np.where(mask, x.data, -np.inf)
    m = np.max(data, axis=axis, keepdims=True)
    e = np.exp(data - m)
    s = np.sum(e, axis=axis, keepdims=True)
    out_data = np.squeeze(np.log(s) + m, axis=axis)

    def bw(g):
        return (np.expand_dims(g, axis) * e / s,)

    return _make(out_data, (x,), bw, "logsumexp")


def l2_normalize(x: Tensor, axis: int = -1, eps: float = 1e-12) -> Tensor:
    """Scale vectors along ``axis`` to unit length; zero vectors map to zero."""
    norm = np.sqrt(np.sum(x.data * x.data, axis=axis, keepdims=True))
    zero = norm <= eps
    safe = np.where(zero, 1.0, norm)
    y = np.where(zero, 0.0, x.data / safe)

    def bw(g):
        gx = (g - y * np.sum(g * y, axis=axis, keepdims=True)) / safe
        return (np.where(zero, 0.0, gx),)

    return _make(y.astype(x.dtype, copy=False), (x,), bw, "l2_normalize")


# ---------------------------------------------------------------- backward

def _pair(a, b):
    if isinstance(a, Tensor):
        return a, as_tensor(b, like=a)
    b = as_tensor(b)
    return as_tensor(a, like=b), b


def _toposort(root: Tensor) -> list[Tensor]:
    order, seen = [], set()
    stack = [(root, False)]
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


def backward(loss: Tensor, params: Iterable[Tensor] | None = None) -> dict[Tensor, np.ndarray]:
    """Reverse-mode sweep from a scalar ``loss``.

    Returns a map from each requires_grad leaf to its gradient. Leaves in
    ``params`` that the loss does not reach get zero gradients. Leaf
    ``.grad`` attributes are also set.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    leaves: dict[int, Tensor] = {}
    for node in reversed(_toposort(loss)):
        g = grads.pop(id(node), None)
        if node._backward is None:
            if node.requires_grad:
                leaves[id(node)] = node
                node.grad = np.array(g, dtype=node.dtype) if g is not None else np.zeros_like(node.data)
            continue
        if g is None:
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
    out = {leaves[k]: leaves[k].grad for k in leaves}
    if params is not None:
        for p in params:
            if p not in out:
                p.grad = np.zeros_like(p.data)
                out[p] = p.grad
    return out


# Tensor hashes by identity so it can key gradient maps.
Tensor.__hash__ = object.__hash__
Tensor.__eq__ = object.__eq__
