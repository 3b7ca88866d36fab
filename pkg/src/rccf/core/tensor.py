"""Dense float64 tensor with reverse-mode automatic differentiation.

Every operation that touches a tensor with ``requires_grad=True`` records a
node holding its parents and a closure mapping the output gradient to one
gradient per parent. :func:`backward` walks those nodes in reverse
topological order and accumulates into ``Tensor.grad``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from rccf.errors import ShapeError

BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class Tensor:
    """An n-dimensional float64 array that can carry a gradient.

    Args:
        data: Anything ``np.asarray`` accepts. Always stored as float64.
        requires_grad: Whether gradients should be accumulated into this
            tensor when a downstream scalar calls :meth:`backward`.
    """

    __array_priority__ = 100  # make ndarray <op> Tensor defer to Tensor

    def __init__(self, data, requires_grad: bool = False, _parents: tuple = (),
                 _backward: Optional[BackwardFn] = None, _op: str = "leaf"):
        self.data = np.asarray(data, dtype=np.float64, order="C")
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._parents: tuple = _parents
        self._backward = _backward
        self.op = _op

    # ------------------------------------------------------------------
    # basic introspection
    # ------------------------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self.op!r}{flag})"

    def __len__(self) -> int:
        return len(self.data)

    # ------------------------------------------------------------------
    # arithmetic
    # ------------------------------------------------------------------
    def __add__(self, other):
        other = as_tensor(other)
        a_shape, b_shape = self.shape, other.shape
        return make_result(
            self.data + other.data, (self, other),
            lambda g: (unbroadcast(g, a_shape), unbroadcast(g, b_shape)), "add")

    __radd__ = __add__

    def __sub__(self, other):
        other = as_tensor(other)
        a_shape, b_shape = self.shape, other.shape
        return make_result(
            self.data - other.data, (self, other),
            lambda g: (unbroadcast(g, a_shape), unbroadcast(-g, b_shape)), "sub")

    def __rsub__(self, other):
        return as_tensor(other) - self

    def __mul__(self, other):
        other = as_tensor(other)
        a, b = self.data, other.data
        return make_result(
            a * b, (self, other),
            lambda g: (unbroadcast(g * b, a.shape), unbroadcast(g * a, b.shape)), "mul")

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = as_tensor(other)
        a, b = self.data, other.data
        return make_result(
            a / b, (self, other),
            lambda g: (unbroadcast(g / b, a.shape), unbroadcast(-g * a / (b * b), b.shape)),
            "div")

    def __rtruediv__(self, other):
        return as_tensor(other) / self

    def __neg__(self):
        return make_result(-self.data, (self,), lambda g: (-g,), "neg")

    def __pow__(self, exponent: float):
        if isinstance(exponent, Tensor):
            raise TypeError("only scalar exponents are supported")
        x = self.data
        p = float(exponent)
        return make_result(x ** p, (self,), lambda g: (g * p * x ** (p - 1.0),), "pow")

    def __matmul__(self, other):
        other = as_tensor(other)
        a, b = self.data, other.data
        if a.ndim < 1 or b.ndim < 1 or a.shape[-1] != b.shape[-2 if b.ndim > 1 else 0]:
            raise ShapeError(f"matmul shapes {a.shape} and {b.shape} do not align")

        def back(g):
            if b.ndim == 1:
                ga = np.multiply.outer(g, b) if a.ndim > 1 else g * b
                gb = np.tensordot(g, a, axes=(tuple(range(g.ndim)), tuple(range(a.ndim - 1)))) \
                    if a.ndim > 1 else g * a
                return ga, gb
            ga = g @ np.swapaxes(b, -1, -2) if a.ndim > 1 else g @ b.T
            if a.ndim == 1:
                gb = np.outer(a, g)
            else:
                gb = np.swapaxes(a, -1, -2) @ g
                gb = unbroadcast(gb, b.shape)
            return unbroadcast(ga, a.shape), gb

        return make_result(a @ b, (self, other), back, "matmul")

    # ------------------------------------------------------------------
    # reductions and shape manipulation
    # ------------------------------------------------------------------
    def sum(self, axis=None, keepdims: bool = False):
        shape = self.shape

        def back(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, shape).copy(),)

        return make_result(self.data.sum(axis=axis, keepdims=keepdims), (self,), back, "sum")

    def mean(self, axis=None, keepdims: bool = False):
        if axis is None:
            count = self.data.size
        else:
            axes = axis if isinstance(axis, tuple) else (axis,)
            count = int(np.prod([self.shape[a] for a in axes]))
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    def max(self, axis: int):
        """Maximum along one axis; the gradient goes to the first maximal entry."""
        x = self.data
        idx = np.argmax(x, axis=axis)

        def back(g):
            mask = np.zeros_like(x)
            np.put_along_axis(mask, np.expand_dims(idx, axis), 1.0, axis=axis)
            return (mask * np.expand_dims(g, axis),)

        return make_result(np.take_along_axis(x, np.expand_dims(idx, axis), axis).squeeze(axis),
                           (self,), back, "max")

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        old = self.shape
        return make_result(self.data.reshape(shape), (self,), lambda g: (g.reshape(old),),
                           "reshape")

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        if not axes:
            axes = tuple(reversed(range(self.ndim)))
        inverse = np.argsort(axes)
        return make_result(self.data.transpose(axes), (self,),
                           lambda g: (g.transpose(inverse),), "transpose")

    def __getitem__(self, index):
        if isinstance(index, Tensor):
            raise TypeError("index with integer arrays, not Tensors")
        shape = self.shape

        def back(g):
            full = np.zeros(shape)
            np.add.at(full, index, g)
            return (full,)

        return make_result(self.data[index], (self,), back, "getitem")

    # ------------------------------------------------------------------
    # elementwise functions
    # ------------------------------------------------------------------
    def exp(self):
        out = np.exp(self.data)
        return make_result(out, (self,), lambda g: (g * out,), "exp")

    def log(self):
        x = self.data
        return make_result(np.log(x), (self,), lambda g: (g / x,), "log")

    def abs(self):
        x = self.data
        return make_result(np.abs(x), (self,), lambda g: (g * np.sign(x),), "abs")

    def tanh(self):
        out = np.tanh(self.data)
        return make_result(out, (self,), lambda g: (g * (1.0 - out * out),), "tanh")

    def sigmoid(self):
        out = 0.5 * (1.0 + np.tanh(0.5 * self.data))
        return make_result(out, (self,), lambda g: (g * out * (1.0 - out),), "sigmoid")

    def relu(self):
        mask = self.data > 0
        return make_result(np.where(mask, self.data, 0.0), (self,), lambda g: (g * mask,),
                           "relu")

    def softplus(self):
        """``log(1 + e^x)``, a smooth stand-in for relu."""
        x = self.data
        slope = 0.5 * (1.0 + np.tanh(0.5 * x))
        return make_result(np.logaddexp(0.0, x), (self,), lambda g: (g * slope,), "softplus")

    def clamp(self, lo: float, hi: float):
        """Clip into ``[lo, hi]``; the gradient is zero where clipping happened."""
        x = self.data
        inside = (x >= lo) & (x <= hi)
        return make_result(np.clip(x, lo, hi), (self,), lambda g: (g * inside,), "clamp")

    def backward(self) -> None:
        backward(self)


# ----------------------------------------------------------------------
# graph helpers
# ----------------------------------------------------------------------
def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` down to ``shape``, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


def make_result(data: np.ndarray, parents: tuple, back: BackwardFn, op: str) -> Tensor:
    """Wrap ``data`` and record a graph node if any parent needs a gradient."""
    if any(p.requires_grad for p in parents):
        return Tensor(data, requires_grad=True, _parents=parents, _backward=back, _op=op)
    return Tensor(data, _op=op)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    return make_result(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors),
                       lambda g: tuple(np.split(g, splits, axis=axis)), "concat")


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    n = len(tensors)
    return make_result(np.stack([t.data for t in tensors], axis=axis), tuple(tensors),
                       lambda g: tuple(np.take(g, i, axis=axis) for i in range(n)), "stack")


@dataclass(frozen=True)
class RecordNode:
    """One entry of a computation record."""

    op: str
    inputs: tuple
    output: int


def topological_order(root: Tensor) -> list:
    """Tensors reachable from ``root`` that carry gradients, parents first."""
    order, seen = [], set()
    stack_ = [(root, False)]
    while stack_:
        node, expanded = stack_.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen or not node.requires_grad:
            continue
        seen.add(id(node))
        stack_.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen and parent.requires_grad:
                stack_.append((parent, False))
    return order


def computation_record(root: Tensor) -> list:
    """The operation nodes behind ``root`` in topological order."""
    return [RecordNode(t.op, tuple(id(p) for p in t._parents), id(t))
            for t in topological_order(root) if t._backward is not None]


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(t) into ``t.grad`` for every tensor needing it.

    Repeated calls add to existing gradients; clear them with ``zero_grad``.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward() needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    order = topological_order(loss)
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        node.grad = g.copy() if node.grad is None else node.grad + g
        if node._backward is None:
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg


def parameters_of(tensors: Iterable[Tensor]) -> list:
    return [t for t in tensors if t.requires_grad]
