"""Reverse-mode differentiation over dense numpy arrays.

Every differentiable operation returns a :class:`Value` that remembers its
parents and a closure propagating the output gradient back to them.  Calling
:meth:`Value.backward` on a scalar walks that tape in reverse topological
order.  Inside :func:`no_grad` no tape is recorded at all, which is what the
imagination rollouts and evaluation loops use.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

from . import kernels

_GRAD_ENABLED = True
DEFAULT_DTYPE = np.float64


class ShapeError(ValueError):
    """Raised when operand shapes do not conform for a primitive."""


@contextlib.contextmanager
def no_grad():
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def grad_enabled() -> bool:
    return _GRAD_ENABLED


class Value:
    """A dense real array that participates in the computation tape."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(DEFAULT_DTYPE)
        self.data: np.ndarray = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Value, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None
        self.op = "leaf"

    # -- bookkeeping -----------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def __repr__(self) -> str:
        return f"Value(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Value":
        return Value(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def _accum(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad += g

    def backward(self) -> None:
        """Populate ``grad`` on every reachable Value that requires it."""
        if self.data.size != 1:
            raise ShapeError(f"backward: root must be scalar, got shape {self.shape}")
        order = _topological(self)
        for v in order:
            if v.requires_grad and v.grad is None:
                v.grad = np.zeros_like(v.data)
        self.grad = np.ones_like(self.data)
        for v in reversed(order):
            if v._backward is not None and v.grad is not None:
                v._backward(v.grad)
        # release the tape so intermediate arrays can be collected
        for v in order:
            if v._parents:
                v._parents = ()
                v._backward = None

    # -- operator sugar --------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(_lift(other)))

    def __rsub__(self, other):
        return add(_lift(other), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return vsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def _topological(root: Value) -> list[Value]:
    order: list[Value] = []
    seen: set[int] = set()
    stack: list[tuple[Value, bool]] = [(root, False)]
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


def _lift(x) -> Value:
    return x if isinstance(x, Value) else Value(np.asarray(x, dtype=DEFAULT_DTYPE))


def _make(data: np.ndarray, parents: Sequence[Value], backward, op: str) -> Value:
    out = Value.__new__(Value)
    out.data = data
    out.grad = None
    out.op = op
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def _broadcast_shape(op: str, a: Value, b: Value) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: cannot broadcast shapes {a.shape} and {b.shape}") from None


# -- elementwise arithmetic ---------------------------------------------
def add(a, b) -> Value:
    a, b = _lift(a), _lift(b)
    _broadcast_shape("add", a, b)

    def backward(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(g, b.shape))

    return _make(a.data + b.data, (a, b), backward, "add")


def mul(a, b) -> Value:
    a, b = _lift(a), _lift(b)
    _broadcast_shape("mul", a, b)

    def backward(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(g * a.data, b.shape))

    return _make(a.data * b.data, (a, b), backward, "mul")


def neg(a: Value) -> Value:
    def backward(g):
        a._accum(-g)

    return _make(-a.data, (a,), backward, "neg")


def scale(a: Value, c: float) -> Value:
    def backward(g):
        a._accum(g * c)

    return _make(a.data * c, (a,), backward, "scale")


def matmul(a: Value, b: Value) -> Value:
    """Matrix product; ``a`` may carry leading batch dimensions, ``b`` is 2-D."""
    if b.ndim != 2 or a.ndim < 1 or a.shape[-1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} @ {b.shape}")

    def backward(g):
        if a.requires_grad:
            a._accum(g @ b.data.T)
        if b.requires_grad:
            a2 = a.data.reshape(-1, a.shape[-1])
            b._accum(a2.T @ g.reshape(-1, b.shape[1]))

    return _make(a.data @ b.data, (a, b), backward, "matmul")


# -- structural -----------------------------------------------------------
def concat(values: Sequence[Value], axis: int = -1) -> Value:
    values = [_lift(v) for v in values]
    if not values:
        raise ShapeError("concat: empty input list")
    nd = values[0].ndim
    ax = axis % nd
    for v in values:
        if v.ndim != nd or v.shape[:ax] + v.shape[ax + 1:] != values[0].shape[:ax] + values[0].shape[ax + 1:]:
            raise ShapeError(f"concat: mismatched shapes {[v.shape for v in values]} on axis {axis}")
    sizes = [v.shape[ax] for v in values]
    bounds = np.cumsum([0] + sizes)

    def backward(g):
        for v, lo, hi in zip(values, bounds[:-1], bounds[1:]):
            if v.requires_grad:
                sl = [slice(None)] * nd
                sl[ax] = slice(lo, hi)
                v._accum(g[tuple(sl)])

    return _make(np.concatenate([v.data for v in values], axis=ax), values, backward, "concat")


def stack(values: Sequence[Value], axis: int = 0) -> Value:
    values = [_lift(v) for v in values]
    if len({v.shape for v in values}) != 1:
        raise ShapeError(f"stack: mismatched shapes {[v.shape for v in values]}")

    def backward(g):
        for i, v in enumerate(values):
            if v.requires_grad:
                v._accum(np.take(g, i, axis=axis))

    return _make(np.stack([v.data for v in values], axis=axis), values, backward, "stack")


def reshape(a: Value, shape) -> Value:
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {a.shape} to {shape}") from None

    def backward(g):
        a._accum(g.reshape(a.shape))

    return _make(out, (a,), backward, "reshape")


def _is_basic_index(idx) -> bool:
    parts = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(p, (slice, int)) or p is Ellipsis for p in parts)


def getitem(a: Value, idx) -> Value:
    basic = _is_basic_index(idx)

    def backward(g):
        full = np.zeros_like(a.data)
        if basic:
            full[idx] = g
        else:
            np.add.at(full, idx, g)
        a._accum(full)

    return _make(a.data[idx], (a,), backward, "getitem")


def pick(a: Value, index: np.ndarray) -> Value:
    """Row-wise gather: ``out[i] = a[i, index[i]]`` for a 2-D ``a``."""
    index = np.asarray(index, dtype=np.int64)
    if a.ndim != 2 or index.shape != (a.shape[0],):
        raise ShapeError(f"pick: need 2-D input and one index per row, got {a.shape} and {index.shape}")
    rows = np.arange(a.shape[0])

    def backward(g):
        full = np.zeros_like(a.data)
        full[rows, index] = g
        a._accum(full)

    return _make(a.data[rows, index], (a,), backward, "pick")


def vsum(a: Value, axis=None, keepdims: bool = False) -> Value:
    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        a._accum(np.broadcast_to(g, a.shape))

    return _make(np.asarray(a.data.sum(axis=axis, keepdims=keepdims)), (a,), backward, "sum")


def mean(a: Value, axis=None, keepdims: bool = False) -> Value:
    n = a.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return scale(vsum(a, axis=axis, keepdims=keepdims), 1.0 / float(n))


# -- nonlinearities -------------------------------------------------------
def sigmoid(a: Value) -> Value:
    out = kernels.sigmoid(a.data)

    def backward(g):
        a._accum(g * out * (1.0 - out))

    return _make(out, (a,), backward, "sigmoid")


def tanh(a: Value) -> Value:
    out = np.tanh(a.data)

    def backward(g):
        a._accum(g * (1.0 - out * out))

    return _make(out, (a,), backward, "tanh")


def relu(a: Value) -> Value:
    mask = a.data > 0

    def backward(g):
        a._accum(g * mask)

    return _make(a.data * mask, (a,), backward, "relu")


def log(a: Value) -> Value:
    def backward(g):
        a._accum(g / a.data)

    return _make(np.log(a.data), (a,), backward, "log")


def exp(a: Value) -> Value:
    out = np.exp(a.data)

    def backward(g):
        a._accum(g * out)

    return _make(out, (a,), backward, "exp")


def softmax(a: Value, mask: np.ndarray | None = None) -> Value:
    """Softmax over the last axis; ``mask`` (bool, True = keep) excludes entries."""
    if mask is not None and np.shape(mask) != a.shape:
        raise ShapeError(f"softmax: mask shape {np.shape(mask)} != input shape {a.shape}")
    out = kernels.masked_softmax(a.data, mask)

    def backward(g):
        a._accum(kernels.softmax_backward(out, g))

    return _make(out, (a,), backward, "softmax")


def log_softmax(a: Value) -> Value:
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    out = shifted - lse
    probs = np.exp(out)

    def backward(g):
        a._accum(g - probs * g.sum(axis=-1, keepdims=True))

    return _make(out, (a,), backward, "log_softmax")


def embedding(weight: Value, ids) -> Value:
    ids = np.asarray(ids, dtype=np.int64)
    if weight.ndim != 2:
        raise ShapeError(f"embedding: weight must be 2-D, got {weight.shape}")
    if ids.size and (ids.min() < 0 or ids.max() >= weight.shape[0]):
        raise IndexError(f"embedding: id out of range [0, {weight.shape[0]}): {ids.min()}..{ids.max()}")

    def backward(g):
        full = np.zeros_like(weight.data)
        np.add.at(full, ids, g)
        weight._accum(full)

    return _make(weight.data[ids], (weight,), backward, "embedding")


def dropout(a: Value, p: float, rng: np.random.Generator | None, train: bool) -> Value:
    """Inverted dropout; identity when not training or ``p == 0``."""
    if not train or p <= 0.0:
        return a
    if rng is None:
        raise ValueError("dropout: a generator is required in train mode")
    keep = (rng.random(a.shape) >= p) / (1.0 - p)

    def backward(g):
        a._accum(g * keep)

    return _make(a.data * keep, (a,), backward, "dropout")


# -- losses -----------------------------------------------------------------
def mse(pred: Value, target) -> Value:
    target = _lift(target)
    if pred.shape != target.shape:
        raise ShapeError(f"mse: prediction shape {pred.shape} != target shape {target.shape}")
    diff = pred.data - target.data
    n = float(diff.size)

    def backward(g):
        if pred.requires_grad:
            pred._accum(g * 2.0 * diff / n)
        if target.requires_grad:
            target._accum(-g * 2.0 * diff / n)

    return _make(np.asarray((diff * diff).sum() / n), (pred, target), backward, "mse")


def nll(log_probs: Value, index) -> Value:
    """Mean negative log-likelihood of categorical ``index`` under row-wise ``log_probs``."""
    return scale(vsum(pick(log_probs, index)), -1.0 / log_probs.shape[0])


# -- recurrent cell -----------------------------------------------------------
def lstm_gates(gates: Value, c_prev: Value) -> Value:
    """Fused gate nonlinearity of an LSTM step.

    ``gates`` holds the pre-activations in i, f, g, o order, shape (B, 4H).
    Returns ``[h | c]`` of shape (B, 2H).
    """
    B, H4 = gates.shape
    H = H4 // 4
    if H4 != 4 * H or c_prev.shape != (B, H):
        raise ShapeError(f"lstm_gates: gates {gates.shape} incompatible with cell {c_prev.shape}")
    hc, cache = kernels.lstm_forward(gates.data, c_prev.data)

    def backward(g):
        dgates, dc = kernels.lstm_backward(g, c_prev.data, cache)
        if gates.requires_grad:
            gates._accum(dgates)
        if c_prev.requires_grad:
            c_prev._accum(dc)

    return _make(hc, (gates, c_prev), backward, "lstm_gates")


def lstm_cell(x: Value, h: Value, c: Value, w_x: Value, w_h: Value, b: Value) -> tuple[Value, Value]:
    """One standard 4-gate LSTM step; returns ``(h_next, c_next)``."""
    if x.ndim != 2 or x.shape[1] != w_x.shape[0]:
        raise ShapeError(f"lstm_cell: input {x.shape} does not match W_x {w_x.shape}")
    if h.shape[1] != w_h.shape[0]:
        raise ShapeError(f"lstm_cell: hidden {h.shape} does not match W_h {w_h.shape}")
    H = h.shape[1]
    hc = lstm_gates(matmul(x, w_x) + matmul(h, w_h) + b, c)
    return hc[:, :H], hc[:, H:]


def as_values(xs: Iterable) -> list[Value]:
    return [_lift(x) for x in xs]
