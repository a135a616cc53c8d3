"""Reverse-mode autodiff over dense float64 numpy arrays.

Each op returns a new :class:`Tensor` holding its parents and a closure that
maps the output gradient to parent gradients. ``Tensor.backward`` walks the
graph in reverse topological order.
"""
from functools import lru_cache

import numpy as np

from .. import kernels


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, _parents=(), _backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def zero_grad(self):
        self.grad = None

    def backward(self):
        """Populate ``.grad`` on every leaf reachable from this scalar."""
        if self.data.size != 1:
            raise ValueError(f"backward() needs a scalar output, got shape {self.data.shape}")
        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        grads = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(as_tensor(other)))

    def __rsub__(self, other):
        return add(as_tensor(other), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward):
    req = any(p.requires_grad for p in parents)
    if not req:
        return Tensor(data)
    return Tensor(data, True, tuple(parents), backward)


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def neg(a):
    return _make(-a.data, (a,), lambda g: (-g,))


def exp(a):
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,))


def square(a):
    return _make(a.data * a.data, (a,), lambda g: (2.0 * a.data * g,))


def tsum(a, axis=None):
    out = a.data.sum(axis=axis)

    def back(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), a.shape).copy(),)
    return _make(out, (a,), back)


def mean(a, axis=None):
    n = a.data.size if axis is None else a.shape[axis]
    return mul(tsum(a, axis), 1.0 / n)


def matmul(a, b):
    return _make(a.data @ b.data, (a, b), lambda g: (g @ b.data.T, a.data.T @ g))


def linear(x, w, b):
    """x (N, F_in) @ w (F_in, F_out) + b (F_out,)."""
    out = x.data @ w.data + b.data
    return _make(out, (x, w, b),
                 lambda g: (g @ w.data.T, x.data.T @ g, g.sum(axis=0)))


def reshape(a, shape):
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def concat(tensors, axis=1):
    tensors = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    edges = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def back(g):
        return tuple(np.take(g, np.arange(edges[i], edges[i + 1]), axis=axis)
                     for i in range(len(tensors)))
    return _make(out, tuple(tensors), back)


def repeat_rows(a, n):
    """Tile along a new leading block: (B, ...) -> (n*B, ...), block-major."""
    out = np.concatenate([a.data] * n, axis=0)

    def back(g):
        return (g.reshape((n,) + a.shape).sum(axis=0),)
    return _make(out, (a,), back)


def leaky_relu(a, slope=0.2):
    mask = a.data > 0
    out = np.where(mask, a.data, slope * a.data)
    return _make(out, (a,), lambda g: (np.where(mask, g, slope * g),))


def conv1d(x, w, b, stride=1, padding=0):
    """x (N, C, L), w (O, C, K), b (O,), zero padding each side."""
    if x.data.ndim != 3 or w.shape[1] != x.shape[1]:
        raise ValueError(f"conv1d expects (N, {w.shape[1]}, L) input, got {x.shape}")
    xp = np.ascontiguousarray(np.pad(x.data, ((0, 0), (0, 0), (padding, padding))))
    wd = np.ascontiguousarray(w.data)
    out = kernels.conv1d_forward(xp, wd, np.ascontiguousarray(b.data), stride)
    length = x.shape[2]

    def back(g):
        dxp, dw, db = kernels.conv1d_backward(xp, wd, np.ascontiguousarray(g), stride)
        return dxp[:, :, padding: padding + length], dw, db
    return _make(out, (x, w, b), back)


def avgpool1d(x, factor):
    n, c, length = x.shape
    lout = length // factor
    if lout < 1:
        raise ValueError(f"avgpool1d factor {factor} exceeds length {length}")
    out = x.data[:, :, : lout * factor].reshape(n, c, lout, factor).mean(axis=3)

    def back(g):
        dx = np.zeros(x.shape)
        dx[:, :, : lout * factor] = np.repeat(g / factor, factor, axis=2)
        return (dx,)
    return _make(out, (x,), back)


@lru_cache(maxsize=64)
def interp_matrix(n_in, n_out):
    """Linear interpolation weights (n_out, n_in), half-cell aligned, edge clamped."""
    m = np.zeros((n_out, n_in))
    scale = n_in / n_out
    for j in range(n_out):
        src = min(max((j + 0.5) * scale - 0.5, 0.0), n_in - 1.0)
        i0 = int(np.floor(src))
        i1 = min(i0 + 1, n_in - 1)
        frac = src - i0
        m[j, i0] += 1.0 - frac
        m[j, i1] += frac
    m.setflags(write=False)
    return m


def interp_upsample1d(x, size):
    m = interp_matrix(x.shape[2], size)
    out = np.einsum("ncl,sl->ncs", x.data, m)
    return _make(out, (x,), lambda g: (np.einsum("ncs,sl->ncl", g, m),))


def batchnorm(x, gamma, beta, running_mean, running_var, training,
              momentum=0.1, eps=1e-10):
    """Batch normalization over all axes but the channel axis (axis 1).

    In training mode the running buffers (numpy arrays) are updated in place.
    """
    axes = (0,) if x.data.ndim == 2 else (0, 2)
    bshape = (1, -1) if x.data.ndim == 2 else (1, -1, 1)
    if training:
        m = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        count = x.data.size // x.shape[1]
        running_mean *= 1.0 - momentum
        running_mean += momentum * m
        running_var *= 1.0 - momentum
        running_var += momentum * var * count / max(count - 1, 1)
    else:
        m, var = running_mean, running_var
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - m.reshape(bshape)) * inv.reshape(bshape)
    out = gamma.data.reshape(bshape) * xhat + beta.data.reshape(bshape)

    def back(g):
        dgamma = (g * xhat).sum(axis=axes)
        dbeta = g.sum(axis=axes)
        gx = g * gamma.data.reshape(bshape)
        if training:
            gm = gx.mean(axis=axes, keepdims=True)
            gxm = (gx * xhat).mean(axis=axes, keepdims=True)
            dx = (gx - gm - xhat * gxm) * inv.reshape(bshape)
        else:
            dx = gx * inv.reshape(bshape)
        return dx, dgamma, dbeta
    return _make(out, (x, gamma, beta), back)
