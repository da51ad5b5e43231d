"""Reverse-mode autodiff on dense numpy arrays.

The graph is a linear tape of executed ops: every op result keeps its parent
tensors and a closure that pushes gradients back to them.  Only the ops the
networks actually need exist; there is no general graph compiler.

Storage is float32 by default, but every op preserves its input dtype, so a
whole graph can run in float64 (the gradient checker relies on this).
"""

from __future__ import annotations

from contextlib import contextmanager
from typing import Callable, Iterable, Optional, Sequence

import numpy as np


class ShapeMismatch(ValueError):
    """Operands disagree with a layer's shape contract."""


class NonFiniteValue(ArithmeticError):
    """An op produced NaN or Inf."""


class MissingGradient(RuntimeError):
    """Optimizer stepped a parameter whose gradient was never populated."""


_grad_enabled = True


@contextmanager
def no_grad():
    """Disable graph recording (inference / frozen-encoder passes)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def _check_finite(data: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(data)):
        raise NonFiniteValue(f"non-finite values in {what}")


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        _check_finite(arr, "tensor init")
        self.data = arr
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self._parents: tuple = ()
        self._backward: Optional[Callable[[], None]] = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, grad={self.requires_grad})"

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def accumulate_grad(self, g: np.ndarray) -> None:
        g = g.astype(self.data.dtype, copy=False)
        if self.grad is None:
            self.grad = g.reshape(self.data.shape).copy()
        else:
            self.grad += g.reshape(self.data.shape)

    def backward(self) -> None:
        """Backpropagate from a scalar result through the recorded tape."""
        if self.data.size != 1:
            raise ShapeMismatch("backward() requires a scalar")
        order = _toposort(self)
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None:
                node._backward()

    # operator sugar used by layer code and tests
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)


def _toposort(root: Tensor) -> list:
    order: list = []
    seen: set = set()
    stack: list = [(root, False)]
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


def from_op(data: np.ndarray, parents: Sequence[Tensor], backward: Callable[[Tensor], Callable[[], None]]):
    """Record one op on the tape.

    ``backward`` is called with the freshly created output tensor and must
    return the closure that distributes ``out.grad`` to the parents.  When
    grads are globally disabled or no parent needs them, the result is a
    detached leaf and no closure is built.
    """
    _check_finite(data, "op output")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out._parents = ()
    out._backward = None
    out.requires_grad = False
    if _grad_enabled and any(p.requires_grad or p._parents for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward(out)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to ``shape``."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _coerce(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.data.dtype))


def add(a: Tensor, b) -> Tensor:
    b = _coerce(b, a)
    data = a.data + b.data

    def bwd(out):
        def run():
            a.accumulate_grad(_unbroadcast(out.grad, a.data.shape))
            b.accumulate_grad(_unbroadcast(out.grad, b.data.shape))

        return run

    return from_op(data, (a, b), bwd)


def mul(a: Tensor, b) -> Tensor:
    b = _coerce(b, a)
    data = a.data * b.data

    def bwd(out):
        def run():
            a.accumulate_grad(_unbroadcast(out.grad * b.data, a.data.shape))
            b.accumulate_grad(_unbroadcast(out.grad * a.data, b.data.shape))

        return run

    return from_op(data, (a, b), bwd)


def reshape(x: Tensor, shape: tuple) -> Tensor:
    data = x.data.reshape(shape)

    def bwd(out):
        def run():
            x.accumulate_grad(out.grad.reshape(x.data.shape))

        return run

    return from_op(data, (x,), bwd)


def relu(x: Tensor) -> Tensor:
    data = np.maximum(x.data, 0)

    def bwd(out):
        mask = x.data > 0

        def run():
            x.accumulate_grad(out.grad * mask)

        return run

    return from_op(data, (x,), bwd)


def sigmoid(x: Tensor) -> Tensor:
    z = x.data
    data = np.empty_like(z)
    pos = z >= 0
    data[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    data[~pos] = ez / (1.0 + ez)

    def bwd(out):
        def run():
            x.accumulate_grad(out.grad * data * (1.0 - data))

        return run

    return from_op(data, (x,), bwd)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    data = e / e.sum(axis=axis, keepdims=True)

    def bwd(out):
        def run():
            g = out.grad
            dot = (g * data).sum(axis=axis, keepdims=True)
            x.accumulate_grad((g - dot) * data)

        return run

    return from_op(data, (x,), bwd)


def cat_rows(tensors: Iterable[Tensor]) -> Tensor:
    """Concatenate along axis 0 (batch assembly for mixed labeled/pseudo sets)."""
    ts = list(tensors)
    data = np.concatenate([t.data for t in ts], axis=0)

    def bwd(out):
        def run():
            ofs = 0
            for t in ts:
                n = t.data.shape[0]
                t.accumulate_grad(out.grad[ofs : ofs + n])
                ofs += n

        return run

    return from_op(data, ts, bwd)
