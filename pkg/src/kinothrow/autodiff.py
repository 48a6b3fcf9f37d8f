"""Reverse-mode automatic differentiation over numpy arrays.

Small tape-based engine: every differentiable quantity is either a plain
ndarray (treated as a constant) or a :class:`Var` holding a value, its
parents, and a backward closure.  All math helpers in this module accept
both kinds of input, so the same formula code runs in "plain" mode (fast,
no tape) and in "grad" mode.

Broadcasting follows numpy semantics; gradients are un-broadcast by
summation in the backward pass.
"""
from __future__ import annotations

import numpy as np
from scipy.special import erf as _erf

_SQRT2 = np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


class Var:
    """Node in the computation graph."""

    __slots__ = ("data", "grad", "_parents", "_backward")

    # make ndarray <op> Var defer to the reflected Var operators instead of
    # numpy's ufunc machinery (which would build an object array)
    __array_ufunc__ = None

    def __init__(self, data, parents=(), backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self._parents = parents
        self._backward = backward

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def __repr__(self):
        return f"Var(shape={self.data.shape})"

    # -- operators -------------------------------------------------------
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
        return neg(self)

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, idx):
        return getitem(self, idx)

    # -- backward --------------------------------------------------------
    def backward(self, seed=None):
        """Accumulate gradients of `self` into every reachable Var."""
        topo: list[Var] = []
        seen: set[int] = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        if seed is None:
            seed = np.ones_like(self.data)
        self.grad = np.asarray(seed, dtype=np.float64)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)


def value(x):
    """Underlying ndarray of a Var or plain input."""
    return x.data if isinstance(x, Var) else np.asarray(x, dtype=np.float64)


def is_var(x):
    return isinstance(x, Var)


def _any_var(*xs):
    return any(isinstance(x, Var) for x in xs)


def _accum(node: Var, g):
    if node.grad is None:
        node.grad = g.copy() if isinstance(g, np.ndarray) else np.asarray(g)
    else:
        node.grad = node.grad + g


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# -- arithmetic ----------------------------------------------------------
def add(a, b):
    if not _any_var(a, b):
        return np.add(a, b)
    av, bv = value(a), value(b)
    out = Var(av + bv, parents=tuple(x for x in (a, b) if isinstance(x, Var)))

    def back(g):
        if isinstance(a, Var):
            _accum(a, _unbroadcast(g, av.shape))
        if isinstance(b, Var):
            _accum(b, _unbroadcast(g, bv.shape))

    out._backward = back
    return out


def sub(a, b):
    if not _any_var(a, b):
        return np.subtract(a, b)
    av, bv = value(a), value(b)
    out = Var(av - bv, parents=tuple(x for x in (a, b) if isinstance(x, Var)))

    def back(g):
        if isinstance(a, Var):
            _accum(a, _unbroadcast(g, av.shape))
        if isinstance(b, Var):
            _accum(b, _unbroadcast(-g, bv.shape))

    out._backward = back
    return out


def mul(a, b):
    if not _any_var(a, b):
        return np.multiply(a, b)
    av, bv = value(a), value(b)
    out = Var(av * bv, parents=tuple(x for x in (a, b) if isinstance(x, Var)))

    def back(g):
        if isinstance(a, Var):
            _accum(a, _unbroadcast(g * bv, av.shape))
        if isinstance(b, Var):
            _accum(b, _unbroadcast(g * av, bv.shape))

    out._backward = back
    return out


def div(a, b):
    if not _any_var(a, b):
        return np.divide(a, b)
    av, bv = value(a), value(b)
    out = Var(av / bv, parents=tuple(x for x in (a, b) if isinstance(x, Var)))

    def back(g):
        if isinstance(a, Var):
            _accum(a, _unbroadcast(g / bv, av.shape))
        if isinstance(b, Var):
            _accum(b, _unbroadcast(-g * av / (bv * bv), bv.shape))

    out._backward = back
    return out


def neg(a):
    if not isinstance(a, Var):
        return np.negative(a)

    out = Var(-a.data, parents=(a,))
    out._backward = lambda g: _accum(a, -g)
    return out


def power(a, p):
    """a ** p with constant exponent p."""
    if not isinstance(a, Var):
        return np.power(a, p)
    av = a.data
    out = Var(av**p, parents=(a,))
    out._backward = lambda g: _accum(a, g * p * av ** (p - 1))
    return out


def _unary(a, fn, dfn):
    if not isinstance(a, Var):
        return fn(np.asarray(a, dtype=np.float64))
    av = a.data
    out = Var(fn(av), parents=(a,))
    out._backward = lambda g: _accum(a, g * dfn(av, out.data))
    return out


def exp(a):
    return _unary(a, np.exp, lambda x, y: y)


def log(a):
    return _unary(a, np.log, lambda x, y: 1.0 / x)


def sqrt(a):
    return _unary(a, np.sqrt, lambda x, y: 0.5 / y)


def sin(a):
    return _unary(a, np.sin, lambda x, y: np.cos(x))


def cos(a):
    return _unary(a, np.cos, lambda x, y: -np.sin(x))


def tanh(a):
    return _unary(a, np.tanh, lambda x, y: 1.0 - y * y)


def erf(a):
    return _unary(a, _erf, lambda x, y: (2.0 / np.sqrt(np.pi)) * np.exp(-x * x))


def sigmoid(a):
    def fn(x):
        out = np.empty_like(x)
        pos = x >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        ex = np.exp(x[~pos])
        out[~pos] = ex / (1.0 + ex)
        return out

    if not isinstance(a, Var):
        return fn(np.asarray(a, dtype=np.float64))
    out = Var(fn(a.data), parents=(a,))
    out._backward = lambda g: _accum(a, g * out.data * (1.0 - out.data))
    return out


def relu(a):
    if not isinstance(a, Var):
        return np.maximum(a, 0.0)
    av = a.data
    out = Var(np.maximum(av, 0.0), parents=(a,))
    out._backward = lambda g: _accum(a, g * (av > 0.0))
    return out


def absolute(a):
    if not isinstance(a, Var):
        return np.abs(a)
    av = a.data
    out = Var(np.abs(av), parents=(a,))
    out._backward = lambda g: _accum(a, g * np.sign(av))
    return out


def maximum(a, b):
    """Elementwise max; ties route the gradient to the first argument."""
    if not _any_var(a, b):
        return np.maximum(a, b)
    av, bv = value(a), value(b)
    take_a = av >= bv
    out = Var(np.where(take_a, av, bv), parents=tuple(x for x in (a, b) if isinstance(x, Var)))

    def back(g):
        if isinstance(a, Var):
            _accum(a, _unbroadcast(g * take_a, av.shape))
        if isinstance(b, Var):
            _accum(b, _unbroadcast(g * ~take_a, bv.shape))

    out._backward = back
    return out


def minimum(a, b):
    if not _any_var(a, b):
        return np.minimum(a, b)
    av, bv = value(a), value(b)
    take_a = av <= bv
    out = Var(np.where(take_a, av, bv), parents=tuple(x for x in (a, b) if isinstance(x, Var)))

    def back(g):
        if isinstance(a, Var):
            _accum(a, _unbroadcast(g * take_a, av.shape))
        if isinstance(b, Var):
            _accum(b, _unbroadcast(g * ~take_a, bv.shape))

    out._backward = back
    return out


def clip(a, lo, hi):
    return minimum(maximum(a, lo), hi)


def where(cond, a, b):
    """Select by a boolean (non-differentiable) condition."""
    cond = np.asarray(value(cond)).astype(bool)
    if not _any_var(a, b):
        return np.where(cond, a, b)
    av, bv = value(a), value(b)
    out = Var(np.where(cond, av, bv), parents=tuple(x for x in (a, b) if isinstance(x, Var)))

    def back(g):
        if isinstance(a, Var):
            _accum(a, _unbroadcast(g * cond, av.shape))
        if isinstance(b, Var):
            _accum(b, _unbroadcast(g * ~cond, bv.shape))

    out._backward = back
    return out


# -- linear algebra / shape ---------------------------------------------
def matmul(a, b):
    if not _any_var(a, b):
        return np.matmul(a, b)
    av, bv = value(a), value(b)
    out = Var(np.matmul(av, bv), parents=tuple(x for x in (a, b) if isinstance(x, Var)))

    def back(g):
        g = np.asarray(g, dtype=np.float64)
        if av.ndim == 1 and bv.ndim == 1:
            # dot product, g scalar
            if isinstance(a, Var):
                _accum(a, g * bv)
            if isinstance(b, Var):
                _accum(b, g * av)
            return
        if bv.ndim == 1:
            # out[...,] = av[..., i, k] bv[k] summed over k -> out has av batch+row dims
            if isinstance(a, Var):
                _accum(a, _unbroadcast(g[..., None] * bv, av.shape))
            if isinstance(b, Var):
                _accum(b, (av * g[..., None]).reshape(-1, bv.shape[0]).sum(axis=0))
            return
        if av.ndim == 1:
            # out[..., j] = av[k] bv[..., k, j]
            if isinstance(a, Var):
                ga = (bv * g[..., None, :]).sum(axis=-1)
                _accum(a, ga.reshape(-1, av.shape[0]).sum(axis=0))
            if isinstance(b, Var):
                _accum(b, _unbroadcast(av[:, None] * g[..., None, :], bv.shape))
            return
        if isinstance(a, Var):
            _accum(a, _unbroadcast(np.matmul(g, np.swapaxes(bv, -1, -2)), av.shape))
        if isinstance(b, Var):
            _accum(b, _unbroadcast(np.matmul(np.swapaxes(av, -1, -2), g), bv.shape))

    out._backward = back
    return out


def asum(a, axis=None, keepdims=False):
    if not isinstance(a, Var):
        return np.sum(a, axis=axis, keepdims=keepdims)
    av = a.data
    out = Var(np.sum(av, axis=axis, keepdims=keepdims), parents=(a,))

    def back(g):
        if axis is None:
            _accum(a, np.broadcast_to(g, av.shape).copy())
            return
        if not keepdims:
            g = np.expand_dims(g, axis)
        _accum(a, np.broadcast_to(g, av.shape).copy())

    out._backward = back
    return out


def amean(a, axis=None, keepdims=False):
    av = value(a)
    n = av.size if axis is None else av.shape[axis]
    return div(asum(a, axis=axis, keepdims=keepdims), float(n))


def getitem(a, idx):
    if not isinstance(a, Var):
        return np.asarray(a)[idx]
    av = a.data
    out = Var(av[idx], parents=(a,))

    def back(g):
        full = np.zeros_like(av)
        np.add.at(full, idx, g)
        _accum(a, full)

    out._backward = back
    return out


def reshape(a, shape):
    if not isinstance(a, Var):
        return np.reshape(a, shape)
    av = a.data
    out = Var(av.reshape(shape), parents=(a,))
    out._backward = lambda g: _accum(a, g.reshape(av.shape))
    return out


def transpose(a, axes):
    if not isinstance(a, Var):
        return np.transpose(a, axes)
    av = a.data
    inv = np.argsort(axes)
    out = Var(np.transpose(av, axes), parents=(a,))
    out._backward = lambda g: _accum(a, np.transpose(g, inv))
    return out


def stack(xs, axis=0):
    if not any(isinstance(x, Var) for x in xs):
        return np.stack(xs, axis=axis)
    vals = [value(x) for x in xs]
    out = Var(np.stack(vals, axis=axis), parents=tuple(x for x in xs if isinstance(x, Var)))

    def back(g):
        parts = np.split(g, len(xs), axis=axis)
        for x, gp in zip(xs, parts):
            if isinstance(x, Var):
                _accum(x, np.squeeze(gp, axis=axis))

    out._backward = back
    return out


def concat(xs, axis=0):
    if not any(isinstance(x, Var) for x in xs):
        return np.concatenate(xs, axis=axis)
    vals = [value(x) for x in xs]
    out = Var(np.concatenate(vals, axis=axis), parents=tuple(x for x in xs if isinstance(x, Var)))
    sizes = [v.shape[axis] for v in vals]
    offsets = np.cumsum([0] + sizes)

    def back(g):
        for x, lo, hi in zip(xs, offsets[:-1], offsets[1:]):
            if isinstance(x, Var):
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(lo, hi)
                _accum(x, g[tuple(sl)])

    out._backward = back
    return out


# -- GELU family ---------------------------------------------------------
def _phi(x):
    return 0.5 * (1.0 + _erf(x / _SQRT2))


def _pdf(x):
    return _INV_SQRT_2PI * np.exp(-0.5 * x * x)


def gelu_d(x, order=0):
    """Exact (erf-form) GELU derivative of the given order, 0..4.

    Each order is itself differentiable: the backward pass uses order+1.
    """
    if order == 0:
        fn = lambda v: v * _phi(v)
    elif order == 1:
        fn = lambda v: _phi(v) + v * _pdf(v)
    elif order == 2:
        fn = lambda v: (2.0 - v * v) * _pdf(v)
    elif order == 3:
        fn = lambda v: (v**3 - 4.0 * v) * _pdf(v)
    elif order == 4:
        fn = lambda v: (-(v**4) + 7.0 * v * v - 4.0) * _pdf(v)
    else:
        raise ValueError(f"gelu derivative order {order} not supported")
    if not isinstance(x, Var):
        return fn(np.asarray(x, dtype=np.float64))
    out = Var(fn(x.data), parents=(x,))
    dfn = gelu_d(x.data, order + 1)
    out._backward = lambda g: _accum(x, g * dfn)
    return out


def gelu(x):
    return gelu_d(x, 0)


# -- gradient helper -----------------------------------------------------
def grad(loss_fn, params):
    """Gradient of a scalar-valued function w.r.t. a list of arrays.

    Wraps each array in a Var, evaluates `loss_fn(vars)`, runs backward,
    and returns (loss value, list of gradient arrays).
    """
    vs = [Var(np.asarray(p, dtype=np.float64)) for p in params]
    out = loss_fn(vs)
    lv = float(np.asarray(value(out)).reshape(-1)[0])
    if not np.isfinite(lv):
        raise FloatingPointError(f"loss is not finite: {lv}")
    if isinstance(out, Var):
        out.backward(seed=np.asarray(1.0))
        gs = [v.grad if v.grad is not None else np.zeros_like(v.data) for v in vs]
    else:
        gs = [np.zeros_like(v.data) for v in vs]
    return lv, [np.asarray(g, dtype=np.float64).reshape(np.shape(p)) for g, p in zip(gs, params)]
