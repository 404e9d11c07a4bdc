"""
Tensor and gradient tape.

A define-by-run tape: every primitive applied to a tensor that requires
gradients records a :class:`Node` holding its inputs and a backward closure.
:func:`backward` walks the recorded graph in reverse topological order and
accumulates gradients into the ``grad`` buffers of leaf tensors.

Usage:
    x = Parameter([3.0])
    loss = (x * x).sum()
    loss.backward()
    x.grad  # array([6.])
"""

import threading
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from ..errors import ContractError

_grad_state = threading.local()


def is_grad_enabled() -> bool:
    """Grad mode is per thread so model clones can run on worker threads."""
    return getattr(_grad_state, "enabled", True)


def set_grad_enabled(mode: bool) -> None:
    _grad_state.enabled = mode


class no_grad:
    """Context manager that disables tape recording on the current thread."""

    def __enter__(self):
        self._prev = is_grad_enabled()
        set_grad_enabled(False)
        return self

    def __exit__(self, *args):
        set_grad_enabled(self._prev)


BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class Node:
    """One recorded primitive application."""

    __slots__ = ("op", "inputs", "backward_fn")

    def __init__(self, op: str, inputs: Tuple["Tensor", ...], backward_fn: BackwardFn):
        self.op = op
        self.inputs = inputs
        self.backward_fn = backward_fn

    def __repr__(self) -> str:
        return f"<Node {self.op}>"


class Tensor:
    """Dense float64 array with optional reverse-mode gradient tracking."""

    __slots__ = ("data", "requires_grad", "grad", "node", "name")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.node: Optional[Node] = None
        self.name = name

    @property
    def shape(self) -> Tuple[int, ...]:
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
        return float(self.data.reshape(-1)[0])

    def backward(self) -> None:
        backward(self)

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return stop_gradient(self)

    # Operator sugar routes through the primitive table.

    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops
        if isinstance(other, (int, float)):
            return ops.scale(self, float(other))
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        from . import ops
        return ops.scale(self, -1.0)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)

    def __rmatmul__(self, other):
        from . import ops
        return ops.matmul(other, self)

    def __getitem__(self, index):
        from . import ops
        return ops.slice_(self, index)

    def reshape(self, *shape):
        from . import ops
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)

    def transpose(self, *axes):
        from . import ops
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return ops.transpose(self, axes or None)

    def sum(self, axis=None, keepdims: bool = False):
        from . import ops
        return ops.sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        from . import ops
        return ops.mean(self, axis=axis, keepdims=keepdims)

    def __repr__(self) -> str:
        tag = f" {self.name}" if self.name else ""
        grad = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor{tag}(shape={self.shape}{grad})"


class Parameter(Tensor):
    """A leaf tensor owned by a module; copies its initial value."""

    __slots__ = ()

    def __init__(self, data, requires_grad: bool = True, name: Optional[str] = None):
        super().__init__(np.array(data, dtype=np.float64), requires_grad=requires_grad, name=name)


def as_tensor(value) -> Tensor:
    """Wrap arrays and scalars as constant tensors; tensors pass through."""
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


def make_result(data: np.ndarray, inputs: Sequence[Tensor], op: str, backward_fn: BackwardFn) -> Tensor:
    """Build an op output, recording it on the tape when any input needs grads."""
    requires = is_grad_enabled() and any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=requires)
    if requires:
        out.node = Node(op, tuple(inputs), backward_fn)
    return out


def stop_gradient(x: Tensor) -> Tensor:
    """Same value as ``x``; contributes no derivative to anything upstream."""
    return Tensor(as_tensor(x).data, requires_grad=False)


def unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _topological_order(root: Tensor) -> List[Tensor]:
    """Reverse topological order from ``root`` (iterative DFS)."""
    visited = set()
    order: List[Tensor] = []
    stack = [(root, False)]
    while stack:
        t, expanded = stack.pop()
        key = id(t)
        if expanded:
            order.append(t)
            continue
        if key in visited:
            continue
        visited.add(key)
        stack.append((t, True))
        if t.node is not None:
            for parent in reversed(t.node.inputs):
                if parent.requires_grad and id(parent) not in visited:
                    stack.append((parent, False))
    order.reverse()
    return order


def backward(loss: Tensor) -> None:
    """
    Populate ``grad`` on every requires_grad leaf reachable from ``loss``.

    Gradients accumulate across calls; reset them with ``zero_grad``.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward requires a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ContractError("loss is not on a recorded tape (no input requires grad)")

    pending = {id(loss): np.ones_like(loss.data)}
    for t in _topological_order(loss):
        g = pending.pop(id(t), None)
        if g is None:
            continue
        if t.node is None:
            t.grad = g.copy() if t.grad is None else t.grad + g
            continue
        for parent, pg in zip(t.node.inputs, t.node.backward_fn(g)):
            if pg is None or not parent.requires_grad:
                continue
            pg = unbroadcast(pg, parent.shape)
            key = id(parent)
            pending[key] = pg if key not in pending else pending[key] + pg
