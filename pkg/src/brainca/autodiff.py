"""Small reverse-mode differentiation tape over numpy arrays.

Every op accepts plain ``ndarray`` or :class:`Var` arguments. When no argument
is a ``Var`` the op returns a plain array and records nothing, so the same
model code serves both inference and training.
"""

from __future__ import annotations

import numpy as np
from scipy.special import erf

_SQRT2 = np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


class Var:
    __slots__ = ("value", "grad", "parents", "backward_fn", "name")
    __array_priority__ = 100.0

    def __init__(self, value, parents=(), backward_fn=None, name=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self.parents = parents
        self.backward_fn = backward_fn
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Var(shape={self.value.shape}, name={self.name})"

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

    def __neg__(self):
        return mul(self, -1.0)

    def __truediv__(self, other):
        return div(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)


def value(x):
    return x.value if isinstance(x, Var) else np.asarray(x, dtype=np.float64)


def _record(out, parents, fn):
    if any(isinstance(p, Var) for p in parents):
        return Var(out, parents, fn)
    return out


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def backward(roots):
    """Accumulate ``.grad`` on every Var reachable from ``roots``.

    ``roots`` is a sequence of ``(var, seed_gradient)`` pairs; a scalar root
    may be passed alone and is seeded with 1.
    """
    if isinstance(roots, Var):
        roots = [(roots, np.ones_like(roots.value))]
    order, seen = [], set()
    for root, _ in roots:
        stack = [(root, False)]
        while stack:
            v, expanded = stack.pop()
            if expanded:
                order.append(v)
                continue
            if id(v) in seen:
                continue
            seen.add(id(v))
            stack.append((v, True))
            for p in v.parents:
                if isinstance(p, Var) and id(p) not in seen:
                    stack.append((p, False))
    grads = {}
    for root, seed in roots:
        seed = np.broadcast_to(np.asarray(seed, dtype=np.float64), root.value.shape)
        grads[id(root)] = grads.get(id(root), 0.0) + seed
    for v in reversed(order):
        g = grads.pop(id(v), None)
        if g is None:
            continue
        if v.backward_fn is None:
            v.grad = g if v.grad is None else v.grad + g
            continue
        for p, pg in zip(v.parents, v.backward_fn(g)):
            if isinstance(p, Var) and pg is not None:
                prev = grads.get(id(p))
                grads[id(p)] = pg if prev is None else prev + pg


# elementwise ---------------------------------------------------------------

def add(a, b):
    va, vb = value(a), value(b)
    return _record(va + vb, (a, b),
                   lambda g: (_unbroadcast(g, va.shape), _unbroadcast(g, vb.shape)))


def sub(a, b):
    va, vb = value(a), value(b)
    return _record(va - vb, (a, b),
                   lambda g: (_unbroadcast(g, va.shape), -_unbroadcast(g, vb.shape)))


def mul(a, b):
    va, vb = value(a), value(b)
    return _record(va * vb, (a, b),
                   lambda g: (_unbroadcast(g * vb, va.shape), _unbroadcast(g * va, vb.shape)))


def div(a, b):
    va, vb = value(a), value(b)
    out = va / vb
    return _record(out, (a, b),
                   lambda g: (_unbroadcast(g / vb, va.shape), _unbroadcast(-g * out / vb, vb.shape)))


def gelu(x):
    vx = value(x)
    cdf = 0.5 * (1.0 + erf(vx / _SQRT2))
    out = vx * cdf

    def fn(g):
        return (g * (cdf + vx * _INV_SQRT_2PI * np.exp(-0.5 * vx * vx)),)
    return _record(out, (x,), fn)


def sigmoid(x):
    vx = value(x)
    out = np.empty_like(vx)
    pos = vx >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-vx[pos]))
    e = np.exp(vx[~pos])
    out[~pos] = e / (1.0 + e)
    return _record(out, (x,), lambda g: (g * out * (1.0 - out),))


def tanh(x):
    out = np.tanh(value(x))
    return _record(out, (x,), lambda g: (g * (1.0 - out * out),))


def log(x):
    vx = value(x)
    return _record(np.log(vx), (x,), lambda g: (g / vx,))


# shape / reduction ---------------------------------------------------------

def sum(x, axis=None):
    vx = value(x)
    out = vx.sum(axis=axis)

    def fn(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, vx.shape).copy(),)
    return _record(out, (x,), fn)


def mean(x, axis=None):
    vx = value(x)
    n = vx.size if axis is None else vx.shape[axis]
    return mul(sum(x, axis), 1.0 / n)


def getitem(x, idx):
    vx = value(x)
    out = vx[idx]

    def fn(g):
        gx = np.zeros_like(vx)
        np.add.at(gx, idx, g)
        return (gx,)
    return _record(out, (x,), fn)


def reshape(x, shape):
    vx = value(x)
    return _record(vx.reshape(shape), (x,), lambda g: (g.reshape(vx.shape),))


def concat(xs, axis=-1):
    vals = [value(x) for x in xs]
    out = np.concatenate(vals, axis=axis)
    bounds = np.cumsum([v.shape[axis] for v in vals])[:-1]
    return _record(out, tuple(xs), lambda g: tuple(np.split(g, bounds, axis=axis)))


def broadcast_rows(x, n):
    """Tile a vector into ``n`` identical rows."""
    vx = value(x)
    out = np.broadcast_to(vx, (n,) + vx.shape).copy()
    return _record(out, (x,), lambda g: (g.sum(axis=0),))


# linear algebra ------------------------------------------------------------

def linear(x, w, b=None):
    """``x @ w.T + b`` for ``x`` of shape (..., fan_in) and ``w`` (fan_out, fan_in)."""
    vx, vw = value(x), value(w)
    out = vx @ vw.T
    if b is not None:
        out = out + value(b)

    def fn(g):
        g2 = g.reshape(-1, g.shape[-1])
        gw = g2.T @ vx.reshape(-1, vx.shape[-1])
        gb = g2.sum(axis=0) if b is not None else None
        return (g @ vw, gw, gb)
    parents = (x, w) if b is None else (x, w, b)
    return _record(out, parents, fn)


def gather(x, gmat, shape, gmat_t=None):
    """Rows of ``x`` selected by a sparse one-hot matrix, reshaped to ``shape``.

    ``gmat`` has one row per output slot and a single 1 in the column of the
    source row (or no entry for padding slots, which read as zeros).
    ``gmat_t`` is its transpose in CSR form, built on demand when omitted.
    """
    vx = value(x)
    out = (gmat @ vx).reshape(shape + vx.shape[1:])

    def fn(g):
        gT = gmat_t if gmat_t is not None else gmat.T.tocsr()
        return (gT @ g.reshape(gmat.shape[0], -1),)
    return _record(out, (x,), fn)


def weighted_sum(w, vals):
    """``out[n] = sum_k w[n, k] * vals[n, k]`` for ``w`` (N, K), ``vals`` (N, K, D)."""
    vw, vv = value(w), value(vals)
    out = np.einsum("nk,nkd->nd", vw, vv)

    def fn(g):
        return np.einsum("nd,nkd->nk", g, vv), vw[:, :, None] * g[:, None, :]
    return _record(out, (w, vals), fn)


# normalizations ------------------------------------------------------------

def masked_softmax(x, mask):
    """Softmax along the last axis over entries where ``mask`` is true.

    Fully masked rows return all zeros.
    """
    vx = value(x)
    shift = np.where(mask, vx, -np.inf).max(axis=-1, keepdims=True)
    shift = np.where(np.isfinite(shift), shift, 0.0)
    e = np.where(mask, np.exp(np.where(mask, vx - shift, 0.0)), 0.0)
    tot = e.sum(axis=-1, keepdims=True)
    out = e / np.where(tot > 0, tot, 1.0)

    def fn(g):
        return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)
    return _record(out, (x,), fn)


def softmax(x):
    vx = value(x)
    e = np.exp(vx - vx.max(axis=-1, keepdims=True))
    out = e / e.sum(axis=-1, keepdims=True)
    return _record(out, (x,), lambda g: (out * (g - (g * out).sum(axis=-1, keepdims=True)),))


def log_softmax(x):
    vx = value(x)
    z = vx - vx.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    out = z - lse
    p = np.exp(out)
    return _record(out, (x,), lambda g: (g - p * g.sum(axis=-1, keepdims=True),))
