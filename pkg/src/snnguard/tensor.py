"""Dense float64 tensors with a reverse-mode tape.

Only two broadcasting forms are supported: tensor-with-scalar and
tensor-with-same-shape. Anything else is rejected so every backward rule
stays a one-liner that can be audited by eye.
"""
from __future__ import annotations

from typing import Callable, Iterable, Optional, Sequence, Tuple, Union

import numpy as np

Scalar = Union[int, float, np.floating]
BackwardFn = Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]


class ShapeError(ValueError):
    pass


class TapeError(RuntimeError):
    pass


class Tensor:
    """An immutable array plus optional gradient buffer.

    ``data`` is never modified after construction; ``grad`` is the only
    mutable state and accumulates across calls to :meth:`backward` until
    :meth:`zero_grad` is called.
    """

    __slots__ = ("data", "requires_grad", "grad", "op", "_parents", "_backward")
    __array_priority__ = 100.0

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if arr.flags.writeable:
            arr = arr.copy()
            arr.setflags(write=False)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self.op = "leaf"
        self._parents: Tuple[Tensor, ...] = ()
        self._backward: Optional[BackwardFn] = None

    @classmethod
    def from_op(cls, data: np.ndarray, parents: Sequence["Tensor"], backward: BackwardFn, op: str) -> "Tensor":
        """Build a result tensor, linking it to the tape only if some parent needs gradients."""
        out = cls.__new__(cls)
        arr = np.asarray(data, dtype=np.float64)
        arr.setflags(write=False)  # freshly computed, so no defensive copy
        out.data = arr
        out.requires_grad = False
        out.grad = None
        out.op = "leaf"
        out._parents = ()
        out._backward = None
        if any(p.requires_grad for p in parents):
            out.requires_grad = True
            out.op = op
            out._parents = tuple(parents)
            out._backward = backward
        return out

    # ------------------------------------------------------------------ basics
    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"expected a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self.op}{flag})"

    def __len__(self) -> int:
        return len(self.data)

    # ------------------------------------------------------------- arithmetic
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def sum(self) -> "Tensor":
        return total(self)

    def mean(self) -> "Tensor":
        return scale(total(self), 1.0 / self.size)

    def abs(self) -> "Tensor":
        return absolute(self)

    def exp(self) -> "Tensor":
        return exp(self)

    def log(self) -> "Tensor":
        return log(self)

    def sigmoid(self) -> "Tensor":
        return sigmoid(self)

    def max_with_scalar(self, c: float) -> "Tensor":
        return max_with_scalar(self, c)

    def reshape(self, *shape) -> "Tensor":
        return reshape(self, *shape)

    def backward(self) -> None:
        backward(self)


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


def _is_scalar(x) -> bool:
    return isinstance(x, (int, float, np.floating, np.integer)) or (isinstance(x, np.ndarray) and x.ndim == 0)


def _as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x)


def _binary_operands(a, b, opname: str):
    """Return (Tensor a, Tensor-or-float b, b_is_scalar)."""
    a = _as_tensor(a)
    if isinstance(b, Tensor):
        if b.shape == a.shape:
            return a, b, False
        if b.size == 1 and b.ndim == 0:
            return a, b, True
        if a.ndim == 0:
            # 0-d tensor on the left broadcasts against b; _reduce_to folds its grad
            return a, b, False
        raise ShapeError(f"{opname}: incompatible shapes {a.shape} and {b.shape}")
    if _is_scalar(b):
        return a, float(b), True
    b_arr = np.asarray(b, dtype=np.float64)
    if b_arr.shape != a.shape:
        raise ShapeError(f"{opname}: incompatible shapes {a.shape} and {b_arr.shape}")
    return a, Tensor(b_arr), False


def _check_same(a: Tensor, b: Tensor, opname: str) -> None:
    if a.shape != b.shape and a.ndim != 0 and b.ndim != 0:
        raise ShapeError(f"{opname}: incompatible shapes {a.shape} and {b.shape}")


def _reduce_to(g: np.ndarray, shape) -> np.ndarray:
    # only ever reduces a full-shape gradient to a 0-d scalar operand
    if g.shape == shape:
        return g
    return np.asarray(g.sum()).reshape(shape)


# ------------------------------------------------------------------ elementwise
def add(a, b) -> Tensor:
    a, b, b_scalar = _binary_operands(a, b, "add")
    if b_scalar and not isinstance(b, Tensor):
        return Tensor.from_op(a.data + b, (a,), lambda g: (g,), "add")
    _check_same(a, b, "add")
    out = a.data + b.data
    sa, sb = a.shape, b.shape
    return Tensor.from_op(out, (a, b), lambda g: (_reduce_to(g, sa), _reduce_to(g, sb)), "add")


def sub(a, b) -> Tensor:
    a, b, b_scalar = _binary_operands(a, b, "sub")
    if b_scalar and not isinstance(b, Tensor):
        return Tensor.from_op(a.data - b, (a,), lambda g: (g,), "sub")
    _check_same(a, b, "sub")
    out = a.data - b.data
    sa, sb = a.shape, b.shape
    return Tensor.from_op(out, (a, b), lambda g: (_reduce_to(g, sa), _reduce_to(-g, sb)), "sub")


def mul(a, b) -> Tensor:
    a, b, b_scalar = _binary_operands(a, b, "mul")
    if b_scalar and not isinstance(b, Tensor):
        return scale(a, b)
    _check_same(a, b, "mul")
    ad, bd = a.data, b.data
    sa, sb = a.shape, b.shape
    return Tensor.from_op(ad * bd, (a, b), lambda g: (_reduce_to(g * bd, sa), _reduce_to(g * ad, sb)), "mul")


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return Tensor.from_op(a.data * c, (a,), lambda g: (g * c,), "scale")


def neg(a: Tensor) -> Tensor:
    return Tensor.from_op(-a.data, (a,), lambda g: (-g,), "neg")


def absolute(a: Tensor) -> Tensor:
    # sign(0) = 0: subgradient zero at the kink
    sgn = np.sign(a.data)
    return Tensor.from_op(np.abs(a.data), (a,), lambda g: (g * sgn,), "abs")


def max_with_scalar(a: Tensor, c: float) -> Tensor:
    """Hinge ``max(a, c)``; the subgradient at ``a == c`` is 0."""
    c = float(c)
    active = (a.data > c).astype(np.float64)
    return Tensor.from_op(np.maximum(a.data, c), (a,), lambda g: (g * active,), "max_with_scalar")


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return Tensor.from_op(out, (a,), lambda g: (g * out,), "exp")


def log(a: Tensor) -> Tensor:
    ad = a.data
    return Tensor.from_op(np.log(ad), (a,), lambda g: (g / ad,), "log")


def sigmoid(a: Tensor) -> Tensor:
    out = _sigmoid(a.data)
    return Tensor.from_op(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def elementwise(op: str, a, b=None) -> Tensor:
    """Dispatch by name: add, sub, mul, neg, scale, max_with_scalar, abs."""
    if op == "add":
        return add(a, b)
    if op == "sub":
        return sub(a, b)
    if op == "mul":
        return mul(a, b)
    if op == "neg":
        return neg(_as_tensor(a))
    if op == "scale":
        return scale(_as_tensor(a), b)
    if op == "max_with_scalar":
        return max_with_scalar(_as_tensor(a), b)
    if op == "abs":
        return absolute(_as_tensor(a))
    raise ValueError(f"unknown elementwise op {op!r}")


# ---------------------------------------------------------------- structural
def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    ad, bd = a.data, b.data
    return Tensor.from_op(ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g), "matmul")


def transpose(a: Tensor) -> Tensor:
    if a.ndim != 2:
        raise ShapeError(f"transpose expects a matrix, got shape {a.shape}")
    return Tensor.from_op(a.data.T.copy(), (a,), lambda g: (g.T,), "transpose")


def total(a: Tensor) -> Tensor:
    shape = a.shape
    return Tensor.from_op(np.asarray(a.data.sum()), (a,), lambda g: (np.full(shape, float(g)),), "sum")


def reshape(a: Tensor, *shape) -> Tensor:
    if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
        shape = tuple(shape[0])
    old = a.shape
    return Tensor.from_op(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),), "reshape")


def pick(a: Tensor, index) -> Tensor:
    """Row-wise gather ``a[i, index[i]]`` from a matrix, giving a vector."""
    index = np.asarray(index, dtype=np.int64)
    if a.ndim != 2 or index.shape != (a.shape[0],):
        raise ShapeError(f"pick: matrix {a.shape} with index {index.shape}")
    rows = np.arange(a.shape[0])
    shape = a.shape

    def back(g):
        out = np.zeros(shape)
        out[rows, index] = g
        return (out,)

    return Tensor.from_op(a.data[rows, index], (a,), back, "pick")


def add_n(items: Iterable[Tensor]) -> Tensor:
    """Sum of equal-shape tensors as one tape node."""
    items = [_as_tensor(t) for t in items]
    if not items:
        raise ValueError("add_n of an empty sequence")
    shape = items[0].shape
    for t in items[1:]:
        if t.shape != shape:
            raise ShapeError(f"add_n: incompatible shapes {shape} and {t.shape}")
    out = np.sum([t.data for t in items], axis=0)
    n = len(items)
    return Tensor.from_op(out, items, lambda g: (g,) * n, "add_n")


def register_custom_backward(forward: Callable[[np.ndarray], np.ndarray],
                             derivative: Callable[[np.ndarray], np.ndarray],
                             name: str = "custom") -> Callable[[Tensor], Tensor]:
    """Make a unary differentiable op from a forward map and a local derivative.

    ``derivative`` sees the saved forward input and returns the factor the
    incoming gradient is multiplied by. This is how spike functions get an
    exact step on the forward pass and a surrogate slope on the backward pass.
    """

    def op(a: Tensor) -> Tensor:
        a = _as_tensor(a)
        x = a.data
        return Tensor.from_op(np.asarray(forward(x), dtype=np.float64), (a,),
                              lambda g: (g * derivative(x),), name)

    op.__name__ = name
    return op


# ------------------------------------------------------------------ backward
def _topological(root: Tensor):
    order, seen = [], set()
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


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(node) into ``grad`` of every tape node reachable from ``loss``."""
    if loss.size != 1:
        raise TapeError(f"backward needs a scalar root, got shape {loss.shape}")
    if not loss.requires_grad:
        raise TapeError("backward called on a tensor that is not on the tape")
    order = _topological(loss)
    pending = {id(loss): np.ones(loss.shape)}
    for node in reversed(order):
        g = pending.pop(id(node), None)
        if g is None:
            continue
        node.grad = g.copy() if node.grad is None else node.grad + g
        if node._backward is None:
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            pending[key] = pg if key not in pending else pending[key] + pg
