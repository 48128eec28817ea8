"""Tape-based reverse-mode automatic differentiation over numpy arrays.

Deliberately small: exactly the operations needed for dense layers, strided
2-D convolutions, dilated causal 1-D convolutions, biased attention, and the
squashing/loss heads built on top of them. A Tensor wraps one numpy array;
an operation records a vector-Jacobian callback only when some input
requires gradients, so evaluation through frozen parameters stays pure
numpy with no graph bookkeeping.
"""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp")

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        parents: tuple = (),
        vjp: Optional[Callable] = None,
    ):
        self.data = np.asarray(data)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self._parents = parents
        self._vjp = vjp

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def backward(self):
        """Reverse accumulation from a scalar output."""
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar tensor")
        order = _topo_order(self)
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._vjp is None or node.grad is None:
                continue
            for parent, g in zip(node._parents, node._vjp(node.grad)):
                if g is None or not parent.requires_grad:
                    continue
                parent.grad = g if parent.grad is None else parent.grad + g

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_wrap(other, self), self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return getitem(self, key)


def _topo_order(root: Tensor) -> list:
    order: list = []
    seen: set = set()
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
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def _wrap(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.data.dtype))


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum gradient g down to the given broadcast-source shape."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _make(data, parents, vjp) -> Tensor:
    tracked = tuple(p for p in parents if p.requires_grad)
    if not tracked:
        return Tensor(data)
    return Tensor(data, requires_grad=True, parents=parents, vjp=vjp)


# ---------------------------------------------------------------------------
# arithmetic


def add(a: Tensor, b) -> Tensor:
    b = _wrap(b, a)
    out = a.data + b.data
    return _make(
        out,
        (a, b),
        lambda g: (_unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)),
    )


def sub(a: Tensor, b) -> Tensor:
    b = _wrap(b, a)
    out = a.data - b.data
    return _make(
        out,
        (a, b),
        lambda g: (_unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)),
    )


def mul(a: Tensor, b) -> Tensor:
    b = _wrap(b, a)
    out = a.data * b.data
    return _make(
        out,
        (a, b),
        lambda g: (
            _unbroadcast(g * b.data, a.data.shape),
            _unbroadcast(g * a.data, b.data.shape),
        ),
    )


def matmul(a: Tensor, b: Tensor) -> Tensor:
    out = a.data @ b.data
    return _make(out, (a, b), lambda g: (g @ b.data.T, a.data.T @ g))


def square(a: Tensor) -> Tensor:
    return _make(a.data * a.data, (a,), lambda g: (2.0 * g * a.data,))


# ---------------------------------------------------------------------------
# elementwise nonlinearities


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    return _make(y, (a,), lambda g: (g * (1.0 - y * y),))


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    y = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                 np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    return _make(y, (a,), lambda g: (g * y * (1.0 - y),))


def relu(a: Tensor) -> Tensor:
    y = np.maximum(a.data, 0.0)
    return _make(y, (a,), lambda g: (g * (a.data > 0),))


def exp(a: Tensor) -> Tensor:
    y = np.exp(a.data)
    return _make(y, (a,), lambda g: (g * y,))


def log(a: Tensor) -> Tensor:
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,))


def clip_by_value(a: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp; gradient passes only through the interior."""
    y = np.clip(a.data, lo, hi)
    inside = (a.data > lo) & (a.data < hi)
    return _make(y, (a,), lambda g: (g * inside,))


def minimum(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise min; on ties the gradient routes to the first argument."""
    take_a = a.data <= b.data
    out = np.where(take_a, a.data, b.data)
    return _make(out, (a, b), lambda g: (g * take_a, g * ~take_a))


# ---------------------------------------------------------------------------
# reductions and shape ops


def sum_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        gg = g
        if axis is not None and not keepdims:
            gg = np.expand_dims(gg, axis)
        return (np.broadcast_to(gg, a.data.shape).astype(a.data.dtype, copy=False),)

    return _make(out, (a,), vjp)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = a.data.size if axis is None else a.data.shape[axis]
    return mul(sum_(a, axis=axis, keepdims=keepdims), 1.0 / n)


def reshape(a: Tensor, shape) -> Tensor:
    old = a.data.shape
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def transpose(a: Tensor) -> Tensor:
    return _make(a.data.T, (a,), lambda g: (g.T,))


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    datas = [t.data for t in tensors]
    out = np.concatenate(datas, axis=axis)
    sizes = [d.shape[axis] for d in datas]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make(out, tuple(tensors), vjp)


def _has_fancy_index(key) -> bool:
    parts = key if isinstance(key, tuple) else (key,)
    return any(isinstance(p, (list, np.ndarray)) for p in parts)


def getitem(a: Tensor, key) -> Tensor:
    out = a.data[key]
    fancy = _has_fancy_index(key)

    def vjp(g):
        ga = np.zeros_like(a.data)
        if fancy:
            np.add.at(ga, key, g)
        else:
            ga[key] += g
        return (ga,)

    return _make(out, (a,), vjp)


def causal_shift(a: Tensor, steps: int) -> Tensor:
    """Shift rows of a (T, C) sequence forward in time, zero-filling the head."""
    T = a.data.shape[0]
    out = np.zeros_like(a.data)
    if steps < T:
        out[steps:] = a.data[: T - steps]

    def vjp(g):
        ga = np.zeros_like(a.data)
        if steps < T:
            ga[: T - steps] = g[steps:]
        return (ga,)

    return _make(out, (a,), vjp)


def take_rows(a: Tensor, index: np.ndarray) -> Tensor:
    """Gather rows of a 2-D tensor into an (..., k) stack; used for im2col."""
    out = a.data[index]

    def vjp(g):
        ga = np.zeros_like(a.data)
        np.add.at(ga, index.reshape(-1), g.reshape(-1, a.data.shape[1]))
        return (ga,)

    return _make(out, (a,), vjp)


def softmax_rows(a: Tensor) -> Tensor:
    """Row softmax of a 2-D tensor; -inf entries map to exactly zero weight."""
    z = a.data - a.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=1, keepdims=True)

    def vjp(g):
        dot = (g * y).sum(axis=1, keepdims=True)
        return (y * (g - dot),)

    return _make(y, (a,), vjp)
