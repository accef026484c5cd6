"""A small reverse-mode autodiff over float64 numpy arrays.

Each op builds a ``Tensor`` holding its parents and a closure mapping the
output gradient to parent gradients.  Graph tracking is skipped when no
parent requires a gradient.  div, log and exp check their
results for NaN/Inf; overflow anywhere else reaches the loss, which
``layers.nll`` checks, so training raises NumericError either way.
"""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from ..errors import ContractError, NumericError


class Tensor:
    __slots__ = ("value", "grad", "requires_grad", "_parents", "_backward", "op")

    def __init__(self, value, requires_grad=False, parents=(), backward=None, op="leaf"):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = parents
        self._backward = backward
        self.op = op

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Tensor(op={self.op}, shape={self.shape})"

    def item(self) -> float:
        return float(self.value)

    def backward(self, seed=None):
        """Accumulate d(self)/d(leaf) into ``leaf.grad`` for every leaf requiring grad."""
        if seed is None:
            if self.value.size != 1:
                raise ContractError("backward() without seed needs a scalar")
            seed = np.ones_like(self.value)
        order = []
        seen = set()
        stack = [(self, False)]
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
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        grads = {id(self): np.asarray(seed, dtype=np.float64)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for p, pg in zip(node._parents, node._backward(g)):
                if pg is None or not p.requires_grad:
                    continue
                if id(p) in grads:
                    grads[id(p)] = grads[id(p)] + pg
                else:
                    grads[id(p)] = pg

    # operator sugar
    def __add__(self, o):
        return add(self, o)

    __radd__ = __add__

    def __sub__(self, o):
        return sub(self, o)

    def __rsub__(self, o):
        return sub(o, self)

    def __mul__(self, o):
        return mul(self, o)

    __rmul__ = __mul__

    def __truediv__(self, o):
        return div(self, o)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, o):
        return matmul(self, o)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(value, parents, backward, op, check=False):
    if check and not np.all(np.isfinite(value)):
        raise NumericError(f"non-finite value produced by {op}")
    parents = tuple(parents)
    if any(p.requires_grad for p in parents):
        return Tensor(value, True, parents, backward, op)
    return Tensor(value, op=op)


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, s in enumerate(shape):
        if s == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.value + b.value, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), "add")


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.value - b.value, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)), "sub")


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.value * b.value, (a, b),
                 lambda g: (_unbroadcast(g * b.value, a.shape), _unbroadcast(g * a.value, b.shape)), "mul")


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = a.value / b.value
    return _make(out, (a, b),
                 lambda g: (_unbroadcast(g / b.value, a.shape), _unbroadcast(-g * out / b.value, b.shape)), "div",
                 check=True)


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.value.ndim != 2 or b.value.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ContractError(f"matmul shape mismatch {a.shape} @ {b.shape}")
    return _make(a.value @ b.value, (a, b), lambda g: (g @ b.value.T, a.value.T @ g), "matmul")


def affine(h, w, b, relu=False):
    """``h @ w + b``, optionally followed by ReLU, as one fused node."""
    h, w, b = as_tensor(h), as_tensor(w), as_tensor(b)
    if h.value.ndim != 2 or w.value.ndim != 2 or h.shape[1] != w.shape[0]:
        raise ContractError(f"matmul shape mismatch {h.shape} @ {w.shape}")
    out = h.value @ w.value
    out += b.value
    if relu:
        np.maximum(out, 0.0, out=out)

    def back(g):
        if relu:
            g = g * (out > 0)
        return g @ w.value.T, h.value.T @ g, _unbroadcast(g, b.shape)

    return _make(out, (h, w, b), back, "affine")


def relu(a):
    mask = a.value > 0
    return _make(a.value * mask, (a,), lambda g: (g * mask,), "relu")


def sigmoid(a):
    out = _sigmoid(a.value)
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def log(a):
    if np.any(a.value <= 0):
        raise NumericError("log of non-positive value")
    return _make(np.log(a.value), (a,), lambda g: (g / a.value,), "log", check=True)


def exp(a):
    out = np.exp(a.value)
    return _make(out, (a,), lambda g: (g * out,), "exp", check=True)


def absolute(a):
    sign = np.sign(a.value)
    return _make(np.abs(a.value), (a,), lambda g: (g * sign,), "abs")


def clip(a, lo, hi):
    mask = (a.value >= lo) & (a.value <= hi)
    return _make(np.clip(a.value, lo, hi), (a,), lambda g: (g * mask,), "clip")


def total(a, axis=None, keepdims=False):
    out = a.value.sum(axis=axis, keepdims=keepdims)

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _make(out, (a,), back, "sum")


def mean(a, axis=None):
    cnt = a.value.size if axis is None else a.shape[axis]
    return mul(total(a, axis), 1.0 / cnt)


def reshape(a, shape):
    return _make(a.value.reshape(shape), (a,), lambda g: (g.reshape(a.shape),), "reshape")


def concat(parts, axis=1):
    parts = [as_tensor(p) for p in parts]
    sizes = np.cumsum([p.shape[axis] for p in parts])[:-1]
    return _make(np.concatenate([p.value for p in parts], axis=axis), parts,
                 lambda g: tuple(np.split(g, sizes, axis=axis)), "concat")


def _scatter_rows(idx, g, n):
    if g.ndim == 1:
        return np.bincount(idx, weights=g, minlength=n)
    s = sp.csr_matrix((np.ones(len(idx)), (idx, np.arange(len(idx)))), shape=(n, len(idx)))
    return s @ g


def take(a, idx):
    """Rows (or entries, for 1-D) of ``a`` at ``idx``; repeated indices allowed."""
    a = as_tensor(a)
    idx = np.asarray(idx, dtype=np.int64)
    n = a.shape[0]
    return _make(a.value[idx], (a,), lambda g: (_scatter_rows(idx, g, n),), "take")


def pick(a, rows, cols):
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)

    def back(g):
        out = np.zeros(a.shape)
        np.add.at(out, (rows, cols), g)
        return (out,)

    return _make(a.value[rows, cols], (a,), back, "pick")


def propagate(indptr, indices, h, weights=None, n_out=None):
    """Weighted neighbor sum: ``out[r] = sum_p w[p] * h[indices[p]]`` over CSR row r.

    ``weights`` (one per CSR entry) may be a Tensor; gradients flow to both
    ``h`` and ``weights``.
    """
    h = as_tensor(h)
    n_out = len(indptr) - 1 if n_out is None else n_out
    w = np.ones(len(indices)) if weights is None else as_tensor(weights).value
    s = sp.csr_matrix((w, indices, indptr), shape=(n_out, h.shape[0]))
    out = s @ h.value
    parents = (h,) if weights is None else (h, as_tensor(weights))
    rows = None

    def back(g):
        nonlocal rows
        gh = s.T @ g
        if weights is None:
            return (gh,)
        if rows is None:
            rows = np.repeat(np.arange(n_out), np.diff(indptr))
        if g.ndim == 1:
            gw = g[rows] * h.value[indices]
        else:
            gw = np.einsum("ij,ij->i", g[rows], h.value[indices])
        return (gh, gw)

    return _make(out, parents, back, "propagate")


def log_softmax(a):
    x = a.value
    shifted = x - x.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    out = shifted - lse
    soft = np.exp(out)
    return _make(out, (a,), lambda g: (g - soft * g.sum(axis=1, keepdims=True),), "log_softmax")


def softmax(a):
    x = a.value
    e = np.exp(x - x.max(axis=1, keepdims=True))
    out = e / e.sum(axis=1, keepdims=True)
    return _make(out, (a,), lambda g: (out * (g - (g * out).sum(axis=1, keepdims=True)),), "softmax")


def log_mix(a, b, wa, wb):
    """Elementwise ``log(wa*exp(a) + wb*exp(b))`` for log-probabilities a, b.

    ``wa``/``wb`` are constant non-negative arrays broadcastable to a's shape,
    never both zero at the same position.
    """
    wa = np.broadcast_to(np.asarray(wa, dtype=np.float64), a.shape)
    wb = np.broadcast_to(np.asarray(wb, dtype=np.float64), a.shape)
    if np.any((wa <= 0) & (wb <= 0)):
        raise ContractError("log_mix weights both zero")
    with np.errstate(divide="ignore"):
        la = np.where(wa > 0, a.value + np.log(np.where(wa > 0, wa, 1.0)), -np.inf)
        lb = np.where(wb > 0, b.value + np.log(np.where(wb > 0, wb, 1.0)), -np.inf)
    top = np.maximum(la, lb)
    out = top + np.log(np.exp(la - top) + np.exp(lb - top))
    resp = np.exp(la - out)
    return _make(out, (a, b), lambda g: (g * resp, g * (1.0 - resp)), "log_mix")
