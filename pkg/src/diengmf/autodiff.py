"""Minimal reverse-mode automatic differentiation over NumPy arrays.

Just enough machinery to backpropagate through the normalizing flow:
elementwise arithmetic, matmul, reductions, gather/scatter, cumulative sums
and triangular solves.  Every helper in this module accepts either plain
ndarrays or :class:`Tensor` objects and returns a Tensor only when at least
one input is one, so the same model code serves both the differentiable
training path and the plain-NumPy evaluation path.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import erf as _erf

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `grad` down to `shape` (reverse of NumPy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """Array node in the computation graph."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=float)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._vjp = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def zero_grad(self):
        self.grad = None

    def backward(self):
        """Accumulate gradients of this scalar into every parameter."""
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar output")
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in seen:
                    stack.append((parent, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._vjp is not None and node.grad is not None:
                node._vjp(node.grad)

    def _accumulate(self, grad: np.ndarray):
        if self.grad is None:
            self.grad = grad.copy()
        else:
            self.grad += grad

    # operator sugar; implementations below
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
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def is_tensor(x) -> bool:
    return isinstance(x, Tensor)


def value(x) -> np.ndarray:
    """Raw ndarray behind `x`, whether Tensor or array-like."""
    return x.data if isinstance(x, Tensor) else np.asarray(x, dtype=float)


def _make(data, parents, vjp):
    """Build a graph node when any parent tracks gradients."""
    parents = tuple(p for p in parents if isinstance(p, Tensor))
    if any(p.requires_grad for p in parents):
        out = Tensor(data, requires_grad=True)
        out._parents = parents
        out._vjp = vjp
        return out
    return data


def _binary(a, b, fwd, vjp_a, vjp_b):
    if not (isinstance(a, Tensor) or isinstance(b, Tensor)):
        return fwd(np.asarray(a, dtype=float), np.asarray(b, dtype=float))
    av, bv = value(a), value(b)
    out = fwd(av, bv)

    def vjp(g):
        if isinstance(a, Tensor) and a.requires_grad:
            a._accumulate(_unbroadcast(vjp_a(g, av, bv), av.shape))
        if isinstance(b, Tensor) and b.requires_grad:
            b._accumulate(_unbroadcast(vjp_b(g, av, bv), bv.shape))

    return _make(out, (a, b), vjp)


def add(a, b):
    return _binary(a, b, lambda x, y: x + y, lambda g, x, y: g, lambda g, x, y: g)


def sub(a, b):
    return _binary(a, b, lambda x, y: x - y, lambda g, x, y: g, lambda g, x, y: -g)


def mul(a, b):
    return _binary(a, b, lambda x, y: x * y, lambda g, x, y: g * y, lambda g, x, y: g * x)


def div(a, b):
    return _binary(
        a, b, lambda x, y: x / y, lambda g, x, y: g / y, lambda g, x, y: -g * x / (y * y)
    )


def matmul(a, b):
    av, bv = value(a), value(b)
    out = av @ bv
    if not (isinstance(a, Tensor) or isinstance(b, Tensor)):
        return out

    def vjp(g):
        if isinstance(a, Tensor) and a.requires_grad:
            a._accumulate(g @ bv.T if bv.ndim > 1 else np.outer(g, bv))
        if isinstance(b, Tensor) and b.requires_grad:
            b._accumulate(av.T @ g)

    return _make(out, (a, b), vjp)


def _unary(a, fwd, dfd):
    av = value(a)
    out = fwd(av)
    if not isinstance(a, Tensor):
        return out

    def vjp(g):
        if a.requires_grad:
            a._accumulate(g * dfd(av, out))

    return _make(out, (a,), vjp)


def exp(a):
    return _unary(a, np.exp, lambda x, y: y)


def log(a):
    return _unary(a, np.log, lambda x, y: 1.0 / x)


def sqrt(a):
    return _unary(a, np.sqrt, lambda x, y: 0.5 / y)


def square(a):
    return _unary(a, np.square, lambda x, y: 2.0 * x)


def softplus(a):
    return _unary(a, lambda x: np.logaddexp(0.0, x), lambda x, y: 1.0 / (1.0 + np.exp(-x)))


def gelu(a):
    """Exact (erf-based) GELU."""

    def fwd(x):
        return 0.5 * x * (1.0 + _erf(x * _INV_SQRT2))

    def dfd(x, y):
        return 0.5 * (1.0 + _erf(x * _INV_SQRT2)) + x * _INV_SQRT2PI * np.exp(-0.5 * x * x)

    return _unary(a, fwd, dfd)


def tensor_sum(a, axis=None, keepdims: bool = False):
    av = value(a)
    out = av.sum(axis=axis, keepdims=keepdims)
    if not isinstance(a, Tensor):
        return out

    def vjp(g):
        if not a.requires_grad:
            return
        g = np.asarray(g)
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        a._accumulate(np.broadcast_to(g, av.shape).copy())

    return _make(out, (a,), vjp)


def mean(a, axis=None, keepdims: bool = False):
    av = value(a)
    count = av.size if axis is None else av.shape[axis]
    return div(tensor_sum(a, axis=axis, keepdims=keepdims), float(count))


def cumsum(a, axis: int = -1):
    av = value(a)
    out = np.cumsum(av, axis=axis)
    if not isinstance(a, Tensor):
        return out

    def vjp(g):
        if a.requires_grad:
            a._accumulate(np.flip(np.cumsum(np.flip(g, axis=axis), axis=axis), axis=axis))

    return _make(out, (a,), vjp)


def where(cond, a, b):
    """Select between two branches; `cond` is a plain boolean array."""
    cond = np.asarray(cond)
    av, bv = value(a), value(b)
    out = np.where(cond, av, bv)
    if not (isinstance(a, Tensor) or isinstance(b, Tensor)):
        return out

    def vjp(g):
        if isinstance(a, Tensor) and a.requires_grad:
            a._accumulate(_unbroadcast(np.where(cond, g, 0.0), av.shape))
        if isinstance(b, Tensor) and b.requires_grad:
            b._accumulate(_unbroadcast(np.where(cond, 0.0, g), bv.shape))

    return _make(out, (a, b), vjp)


def reshape(a, shape):
    av = value(a)
    out = av.reshape(shape)
    if not isinstance(a, Tensor):
        return out

    def vjp(g):
        if a.requires_grad:
            a._accumulate(g.reshape(av.shape))

    return _make(out, (a,), vjp)


def transpose(a):
    av = value(a)
    out = av.T
    if not isinstance(a, Tensor):
        return out

    def vjp(g):
        if a.requires_grad:
            a._accumulate(g.T)

    return _make(out, (a,), vjp)


def concat(parts, axis: int = -1):
    values = [value(p) for p in parts]
    out = np.concatenate(values, axis=axis)
    if not any(isinstance(p, Tensor) for p in parts):
        return out

    sizes = [v.shape[axis] for v in values]
    offsets = np.cumsum([0] + sizes)

    def vjp(g):
        for part, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            if isinstance(part, Tensor) and part.requires_grad:
                index = [slice(None)] * g.ndim
                index[axis] = slice(lo, hi)
                part._accumulate(g[tuple(index)])

    return _make(out, tuple(parts), vjp)


def take_static(a, indices, axis: int = -1):
    """Select fixed indices along an axis (column/channel selection)."""
    indices = np.asarray(indices, dtype=int)
    av = value(a)
    out = np.take(av, indices, axis=axis)
    if not isinstance(a, Tensor):
        return out

    def vjp(g):
        if a.requires_grad:
            full = np.zeros_like(av)
            np.add.at(full, _axis_index(av.ndim, axis, indices), g)
            a._accumulate(full)

    return _make(out, (a,), vjp)


def put_static(a, indices, size: int, axis: int = -1):
    """Scatter `a` into a zero array of width `size` along `axis`."""
    indices = np.asarray(indices, dtype=int)
    av = value(a)
    shape = list(av.shape)
    shape[axis] = size
    out = np.zeros(shape)
    out[_axis_index(av.ndim, axis, indices)] = av
    if not isinstance(a, Tensor):
        return out

    def vjp(g):
        if a.requires_grad:
            a._accumulate(g[_axis_index(av.ndim, axis, indices)])

    return _make(out, (a,), vjp)


def _axis_index(ndim: int, axis: int, indices: np.ndarray):
    index = [slice(None)] * ndim
    index[axis % ndim] = indices
    return tuple(index)


def gather_last(a, indices):
    """Per-row gather along the last axis: out[..., j] = a[..., idx[..., j]]."""
    indices = np.asarray(indices, dtype=int)
    av = value(a)
    out = np.take_along_axis(av, indices[..., None], axis=-1)[..., 0]
    if not isinstance(a, Tensor):
        return out

    def vjp(g):
        if not a.requires_grad:
            return
        flat_width = av.shape[-1]
        rows = int(np.prod(av.shape[:-1], dtype=int))
        full = np.zeros((rows, flat_width))
        np.add.at(full, (np.arange(rows), indices.reshape(rows)), g.reshape(rows))
        a._accumulate(full.reshape(av.shape))

    return _make(out, (a,), vjp)


def solve_tri_rows(a, rows, lower: bool, unit_diagonal: bool = False):
    """Row-wise triangular solve: returns X with X[i] = A^{-1} rows[i].

    `a` is an (n, n) triangular matrix, `rows` an (M, n) batch.
    """
    av, rv = value(a), value(rows)
    x = solve_triangular(av, rv.T, lower=lower, unit_diagonal=unit_diagonal).T
    if not (isinstance(a, Tensor) or isinstance(rows, Tensor)):
        return x

    def vjp(g):
        # X = A^{-1} B with B = rows^T: grad_B = A^{-T} G, grad_A = -grad_B X^T,
        # restricted to the triangle the solve actually reads
        grad_rows = solve_triangular(
            av.T, g.T, lower=not lower, unit_diagonal=unit_diagonal
        ).T
        if isinstance(rows, Tensor) and rows.requires_grad:
            rows._accumulate(grad_rows)
        if isinstance(a, Tensor) and a.requires_grad:
            grad_a = -(grad_rows.T @ x)
            offset = 1 if unit_diagonal else 0
            grad_a = np.tril(grad_a, -offset) if lower else np.triu(grad_a, offset)
            a._accumulate(grad_a)

    return _make(x, (a, rows), vjp)


def softmax_last(a):
    """Softmax over the last axis (max-shifted for stability)."""
    shift = value(a).max(axis=-1, keepdims=True)
    e = exp(sub(a, shift))
    return div(e, tensor_sum(e, axis=-1, keepdims=True))
