"""Dense float64 tensors with reverse-mode automatic differentiation.

Everything is stored row-major in 64-bit precision.  Every operation
validates that its result is finite; NaN or Inf anywhere raises
:class:`NonFiniteError` immediately instead of propagating garbage.
Graphs are single-use: calling :func:`backward` a second time on the
same graph raises :class:`GraphError`.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np


class NonFiniteError(FloatingPointError):
    """An operation produced NaN or Inf."""


class GraphError(RuntimeError):
    """Invalid use of the compute graph (non-scalar loss, reused graph, ...)."""


def _assert_finite(arr: np.ndarray, opname: str) -> None:
    # A NaN/Inf anywhere poisons the sum, so one reduction suffices.
    total = arr.sum()
    if not np.isfinite(total) and not bool(np.isfinite(arr).all()):
        raise NonFiniteError(f"{opname} produced non-finite values")


class Tensor:
    """A float64 array plus the bookkeeping for reverse-mode autodiff."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_consumed")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if not arr.flags.c_contiguous:
            arr = np.ascontiguousarray(arr)
        _assert_finite(arr, "tensor creation")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None
        self._consumed = False

    # -- basic introspection ------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise GraphError("item() requires a scalar tensor")
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # -- operators ------------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self):
        return tsum(self)

    def mean(self):
        return tmean(self)

    def reshape(self, *shape):
        return reshape(self, *shape)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def make_op(
    data: np.ndarray,
    parents: Sequence[Tensor],
    backward_fn: Callable[[np.ndarray], None],
    opname: str,
) -> Tensor:
    """Wrap an op result, attaching the backward closure only when needed."""
    out = Tensor.__new__(Tensor)
    arr = np.asarray(data, dtype=np.float64)
    if not arr.flags.c_contiguous:
        arr = np.ascontiguousarray(arr)
    _assert_finite(arr, opname)
    out.data = arr
    out.grad = None
    out._consumed = False
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


def accumulate_grad(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        # Copy so later in-place accumulation cannot corrupt aliased buffers.
        t.grad = np.array(g, dtype=np.float64)
    else:
        t.grad += g


def backward(loss: Tensor) -> None:
    """Populate ``grad`` on every reachable tensor with ``requires_grad``.

    The traversal order is a topological sort, so each node's backward
    closure runs exactly once.  Interior buffers are released afterwards,
    which is what makes a second call on the same graph an error.
    """
    if loss.data.size != 1:
        raise GraphError("backward requires a scalar loss")
    if loss._consumed:
        raise GraphError("backward was already called on this graph")
    if not loss.requires_grad:
        raise GraphError("loss is detached from any parameter")

    topo: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        if node._consumed and node._backward is None and node._parents == () and node is not loss:
            raise GraphError("graph was already consumed by a previous backward")
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in visited:
                stack.append((p, False))

    loss.grad = np.ones_like(loss.data)
    for node in reversed(topo):
        fn = node._backward
        if fn is not None:
            fn(node.grad)
            node._consumed = True
            node._backward = None
            node._parents = ()
            node.grad = None  # interior gradient no longer needed
    loss._consumed = True


# -- elementwise / linear-algebra primitives ----------------------------------


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce a broadcast gradient back to the operand's shape."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, s in enumerate(shape):
        if s == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data + b.data

    def bwd(g):
        accumulate_grad(a, _unbroadcast(g, a.data.shape))
        accumulate_grad(b, _unbroadcast(g, b.data.shape))

    return make_op(out_data, (a, b), bwd, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data - b.data

    def bwd(g):
        accumulate_grad(a, _unbroadcast(g, a.data.shape))
        accumulate_grad(b, _unbroadcast(-g, b.data.shape))

    return make_op(out_data, (a, b), bwd, "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data * b.data

    def bwd(g):
        accumulate_grad(a, _unbroadcast(g * b.data, a.data.shape))
        accumulate_grad(b, _unbroadcast(g * a.data, b.data.shape))

    return make_op(out_data, (a, b), bwd, "mul")


def square(a) -> Tensor:
    a = as_tensor(a)
    out_data = a.data * a.data

    def bwd(g):
        accumulate_grad(a, 2.0 * a.data * g)

    return make_op(out_data, (a,), bwd, "square")


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise GraphError("matmul expects 2-D operands")
    out_data = a.data @ b.data

    def bwd(g):
        accumulate_grad(a, g @ b.data.T)
        accumulate_grad(b, a.data.T @ g)

    return make_op(out_data, (a, b), bwd, "matmul")


def tsum(a) -> Tensor:
    a = as_tensor(a)
    out_data = np.asarray(a.data.sum())

    def bwd(g):
        accumulate_grad(a, np.broadcast_to(g, a.data.shape))

    return make_op(out_data, (a,), bwd, "sum")


def tmean(a) -> Tensor:
    a = as_tensor(a)
    out_data = np.asarray(a.data.mean())
    n = a.data.size

    def bwd(g):
        accumulate_grad(a, np.broadcast_to(g / n, a.data.shape))

    return make_op(out_data, (a,), bwd, "mean")


def sum_axis(a, axis: int) -> Tensor:
    a = as_tensor(a)
    out_data = a.data.sum(axis=axis)

    def bwd(g):
        accumulate_grad(a, np.broadcast_to(np.expand_dims(g, axis), a.data.shape))

    return make_op(out_data, (a,), bwd, "sum_axis")


def reshape(a, *shape) -> Tensor:
    a = as_tensor(a)
    if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
        shape = tuple(shape[0])
    out_data = a.data.reshape(shape)
    in_shape = a.data.shape

    def bwd(g):
        accumulate_grad(a, g.reshape(in_shape))

    return make_op(out_data, (a,), bwd, "reshape")
