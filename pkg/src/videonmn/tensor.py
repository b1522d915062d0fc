"""Minimal dense-array autodiff core.

A `Tensor` wraps a numpy array and records the operations applied to it;
`backward()` on a scalar result fills `.grad` on every reachable tensor
that has `requires_grad` set. Training runs in float32; gradient checking
runs the same code in float64 (ops inherit the dtype of their inputs).

Elementwise `minimum`/`maximum` route the subgradient to the first
argument on ties. `clip` passes gradient on the closed interval so that
values sitting exactly on a bound still train.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Tensor",
    "NonScalarLoss",
    "ShapeMismatch",
    "no_grad",
    "is_grad_enabled",
    "concat",
    "stack",
    "minimum",
    "maximum",
    "dropout",
    "embedding",
    "conv1d_same",
    "shift1d",
    "cosine",
    "logsumexp",
]


class ShapeMismatch(ValueError):
    """Operand shapes are incompatible for the requested op."""


class NonScalarLoss(ValueError):
    """backward() was called on a tensor with more than one element."""


_GRAD_ENABLED = True


class no_grad:
    """Context manager that disables graph recording (inference mode)."""

    def __enter__(self):
        global _GRAD_ENABLED
        self._prev = _GRAD_ENABLED
        _GRAD_ENABLED = False
        return self

    def __exit__(self, *exc):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._prev
        return False


def is_grad_enabled():
    return _GRAD_ENABLED


def _unbroadcast(grad, shape):
    """Sum `grad` down to `shape` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        self.data = np.asarray(data, dtype=dtype) if dtype is not None else np.asarray(data)
        if self.data.dtype not in (np.float32, np.float64):
            self.data = self.data.astype(np.float32)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None

    @classmethod
    def _result(cls, data, parents, backward):
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        needs = _GRAD_ENABLED and any(p.requires_grad for p in parents)
        out.requires_grad = needs
        out._parents = parents if needs else ()
        out._backward = backward if needs else None
        return out

    # -- basics ---------------------------------------------------------

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
        return float(self.data)

    def detach(self):
        return Tensor(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, grad={self.requires_grad})"

    def _coerce(self, other):
        if isinstance(other, Tensor):
            return other
        return Tensor(np.asarray(other, dtype=self.data.dtype))

    def _accum(self, grad):
        # copy on first store: the same buffer may be routed to several parents
        if self.grad is None:
            self.grad = np.array(grad, dtype=self.data.dtype, copy=True)
        else:
            self.grad += grad

    # -- arithmetic -----------------------------------------------------

    def __add__(self, other):
        other = self._coerce(other)
        a, b = self, other
        data = a.data + b.data

        def backward(g):
            if a.requires_grad:
                a._accum(_unbroadcast(g, a.data.shape))
            if b.requires_grad:
                b._accum(_unbroadcast(g, b.data.shape))

        return Tensor._result(data, (a, b), backward)

    __radd__ = __add__

    def __neg__(self):
        a = self

        def backward(g):
            if a.requires_grad:
                a._accum(-g)

        return Tensor._result(-a.data, (a,), backward)

    def __sub__(self, other):
        return self + (-self._coerce(other))

    def __rsub__(self, other):
        return self._coerce(other) + (-self)

    def __mul__(self, other):
        other = self._coerce(other)
        a, b = self, other
        data = a.data * b.data

        def backward(g):
            if a.requires_grad:
                a._accum(_unbroadcast(g * b.data, a.data.shape))
            if b.requires_grad:
                b._accum(_unbroadcast(g * a.data, b.data.shape))

        return Tensor._result(data, (a, b), backward)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = self._coerce(other)
        a, b = self, other
        data = a.data / b.data

        def backward(g):
            if a.requires_grad:
                a._accum(_unbroadcast(g / b.data, a.data.shape))
            if b.requires_grad:
                b._accum(_unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))

        return Tensor._result(data, (a, b), backward)

    def __matmul__(self, other):
        other = self._coerce(other)
        a, b = self, other
        if a.data.shape[-1] != b.data.shape[0]:
            raise ShapeMismatch(f"matmul {a.data.shape} @ {b.data.shape}")
        data = a.data @ b.data

        def backward(g):
            if a.requires_grad:
                if b.data.ndim == 1:
                    a._accum(np.outer(g, b.data) if a.data.ndim == 2 else g * b.data)
                else:
                    ga = g @ b.data.T if g.ndim >= 1 else g * b.data.T
                    a._accum(ga.reshape(a.data.shape))
            if b.requires_grad:
                if a.data.ndim == 1:
                    gb = np.outer(a.data, g) if b.data.ndim == 2 else g * a.data
                else:
                    gb = a.data.T @ g
                b._accum(gb.reshape(b.data.shape))

        return Tensor._result(data, (a, b), backward)

    # -- reductions -----------------------------------------------------

    def sum(self, axis=None, keepdims=False):
        a = self
        data = a.data.sum(axis=axis, keepdims=keepdims)

        def backward(g):
            if not a.requires_grad:
                return
            if axis is None:
                a._accum(np.broadcast_to(g, a.data.shape).astype(a.data.dtype, copy=True))
            else:
                gg = g if keepdims else np.expand_dims(g, axis)
                a._accum(np.broadcast_to(gg, a.data.shape).copy())

        return Tensor._result(np.asarray(data), (a,), backward)

    def mean(self, axis=None, keepdims=False):
        n = self.data.size if axis is None else self.data.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    # -- shape ops ------------------------------------------------------

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        a = self
        data = a.data.reshape(shape)

        def backward(g):
            if a.requires_grad:
                a._accum(g.reshape(a.data.shape))

        return Tensor._result(data, (a,), backward)

    def __getitem__(self, key):
        a = self
        data = a.data[key]

        def backward(g):
            if a.requires_grad:
                full = np.zeros_like(a.data)
                np.add.at(full, key, g)
                a._accum(full)

        return Tensor._result(data, (a,), backward)

    # -- nonlinearities --------------------------------------------------

    def relu(self):
        a = self
        mask = a.data > 0

        def backward(g):
            if a.requires_grad:
                a._accum(g * mask)

        return Tensor._result(a.data * mask, (a,), backward)

    def sigmoid(self):
        a = self
        out = 1.0 / (1.0 + np.exp(-a.data))

        def backward(g):
            if a.requires_grad:
                a._accum(g * out * (1.0 - out))

        return Tensor._result(out, (a,), backward)

    def tanh(self):
        a = self
        out = np.tanh(a.data)

        def backward(g):
            if a.requires_grad:
                a._accum(g * (1.0 - out * out))

        return Tensor._result(out, (a,), backward)

    def exp(self):
        a = self
        out = np.exp(a.data)

        def backward(g):
            if a.requires_grad:
                a._accum(g * out)

        return Tensor._result(out, (a,), backward)

    def log(self):
        a = self
        out = np.log(a.data)

        def backward(g):
            if a.requires_grad:
                a._accum(g / a.data)

        return Tensor._result(out, (a,), backward)

    def sqrt(self):
        a = self
        out = np.sqrt(a.data)

        def backward(g):
            if a.requires_grad:
                a._accum(g * 0.5 / out)

        return Tensor._result(out, (a,), backward)

    def abs(self):
        a = self
        sign = np.sign(a.data)

        def backward(g):
            if a.requires_grad:
                a._accum(g * sign)

        return Tensor._result(np.abs(a.data), (a,), backward)

    def clip(self, lo, hi):
        a = self
        mask = (a.data >= lo) & (a.data <= hi)

        def backward(g):
            if a.requires_grad:
                a._accum(g * mask)

        return Tensor._result(np.clip(a.data, lo, hi), (a,), backward)

    def softmax(self, axis=-1):
        a = self
        shifted = a.data - a.data.max(axis=axis, keepdims=True)
        e = np.exp(shifted)
        out = e / e.sum(axis=axis, keepdims=True)

        def backward(g):
            if a.requires_grad:
                dot = (g * out).sum(axis=axis, keepdims=True)
                a._accum((g - dot) * out)

        return Tensor._result(out, (a,), backward)

    # -- autodiff --------------------------------------------------------

    def backward(self):
        """Reverse pass from a scalar; frees the graph afterwards."""
        if self.data.size != 1:
            raise NonScalarLoss(f"backward() needs a scalar, got shape {self.data.shape}")
        topo = []
        visited = set()
        stack = [(self, False)]
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
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            bw = node._backward
            if bw is not None:
                if node.grad is not None:
                    bw(node.grad)
                # free the graph and intermediate grads as we go
                node._parents = ()
                node._backward = None
                if node is not self:
                    node.grad = None


# -- free functions -------------------------------------------------------


def concat(tensors, axis=0):
    tensors = list(tensors)
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for t, s, e in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(s, e)
                t._accum(g[tuple(idx)])

    return Tensor._result(data, tuple(tensors), backward)


def stack(tensors):
    """Stack scalars/vectors along a new leading axis."""
    tensors = list(tensors)
    data = np.stack([t.data for t in tensors])

    def backward(g):
        for i, t in enumerate(tensors):
            if t.requires_grad:
                t._accum(g[i])

    return Tensor._result(data, tuple(tensors), backward)


def minimum(a, b):
    """Elementwise min; on ties the gradient goes to the first argument."""
    if a.data.shape != b.data.shape:
        raise ShapeMismatch(f"minimum {a.data.shape} vs {b.data.shape}")
    take_a = a.data <= b.data

    def backward(g):
        if a.requires_grad:
            a._accum(g * take_a)
        if b.requires_grad:
            b._accum(g * ~take_a)

    return Tensor._result(np.where(take_a, a.data, b.data), (a, b), backward)


def maximum(a, b):
    """Elementwise max; on ties the gradient goes to the first argument."""
    if a.data.shape != b.data.shape:
        raise ShapeMismatch(f"maximum {a.data.shape} vs {b.data.shape}")
    take_a = a.data >= b.data

    def backward(g):
        if a.requires_grad:
            a._accum(g * take_a)
        if b.requires_grad:
            b._accum(g * ~take_a)

    return Tensor._result(np.where(take_a, a.data, b.data), (a, b), backward)


def dropout(x, p, rng, training):
    """Inverted dropout; identity when not training or p == 0."""
    if not training or p <= 0.0:
        return x
    keep = (rng.random(x.data.shape) >= p).astype(x.data.dtype)
    scale = 1.0 / (1.0 - p)
    mask = keep * scale

    def backward(g):
        if x.requires_grad:
            x._accum(g * mask)

    return Tensor._result(x.data * mask, (x,), backward)


def embedding(table, ids):
    """Rows of `table` (V, E) at integer `ids` (L,) -> (L, E)."""
    ids = np.asarray(ids, dtype=np.int64)
    data = table.data[ids]

    def backward(g):
        if table.requires_grad:
            full = np.zeros_like(table.data)
            np.add.at(full, ids, g)
            table._accum(full)

    return Tensor._result(data, (table,), backward)


def conv1d_same(a, w):
    """1-D cross-correlation with zero 'same' padding; odd kernel only."""
    k = w.data.shape[0]
    if k % 2 != 1:
        raise ShapeMismatch("conv1d_same needs an odd kernel")
    half = k // 2
    a_pad = np.pad(a.data, half)
    data = np.correlate(a_pad, w.data, mode="valid")

    def backward(g):
        if a.requires_grad:
            a._accum(np.convolve(g, w.data, mode="same"))
        if w.requires_grad:
            w._accum(np.correlate(a_pad, g, mode="valid"))

    return Tensor._result(data, (a, w), backward)


def shift1d(a, d, sign):
    """Shift a 1-D curve by the scalar `d` frames with linear interpolation.

    sign=+1 samples a[i + d] (mass moves earlier), sign=-1 samples a[i - d].
    Sample positions are clamped at the edges (border replicate).
    """
    T = a.data.shape[0]
    pos = np.arange(T, dtype=a.data.dtype) + sign * d.data
    pos_c = np.clip(pos, 0.0, T - 1.0)
    lo = np.floor(pos_c).astype(np.int64)
    hi = np.minimum(lo + 1, T - 1)
    frac = pos_c - lo
    data = a.data[lo] * (1.0 - frac) + a.data[hi] * frac
    interior = (pos > 0.0) & (pos < T - 1.0)

    def backward(g):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            np.add.at(full, lo, g * (1.0 - frac))
            np.add.at(full, hi, g * frac)
            a._accum(full)
        if d.requires_grad:
            slope = (a.data[hi] - a.data[lo]) * interior
            d._accum(np.asarray((g * slope).sum() * sign, dtype=d.data.dtype))

    return Tensor._result(data, (a, d), backward)


def cosine(a, b, eps=1e-12):
    """Cosine similarity over the last axis; broadcasts (T, H) against (H,)."""
    dot = (a * b).sum(axis=-1)
    na = (a * a).sum(axis=-1).sqrt()
    nb = (b * b).sum(axis=-1).sqrt()
    return dot / (na * nb + eps)


def logsumexp(x):
    """Numerically stable log-sum-exp of a 1-D tensor."""
    m = float(x.data.max())
    return (x - m).exp().sum().log() + m
