"""
Differentiable primitives.

Each primitive validates its input shapes, computes the forward value with
numpy and records a backward closure through :func:`make_result`. The table
``PRIMITIVES`` backs :func:`apply_primitive`.
"""

import math
from typing import Dict, Optional, Sequence, Tuple

import numpy as np

from ..errors import ContractError, DimensionError
from .tensor import Tensor, as_tensor, make_result

GELU_C = math.sqrt(2.0 / math.pi)


def _broadcast_shape(op: str, a: Tensor, b: Tensor) -> Tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(op, [a.shape, b.shape], "not broadcastable")


def _swap(x: np.ndarray) -> np.ndarray:
    return np.swapaxes(x, -1, -2)


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError("matmul", [a.shape, b.shape])
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise DimensionError("matmul", [a.shape, b.shape], "batch dims not broadcastable")

    def backward(g):
        return (
            np.matmul(g, _swap(b.data)) if a.requires_grad else None,
            np.matmul(_swap(a.data), g) if b.requires_grad else None,
        )

    return make_result(np.matmul(a.data, b.data), (a, b), "matmul", backward)


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("add", a, b)
    return make_result(a.data + b.data, (a, b), "add", lambda g: (g, g))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("sub", a, b)
    return make_result(a.data - b.data, (a, b), "sub", lambda g: (g, -g))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("mul", a, b)
    return make_result(a.data * b.data, (a, b), "mul", lambda g: (g * b.data, g * a.data))


def scale(a, factor: float) -> Tensor:
    a = as_tensor(a)
    return make_result(a.data * factor, (a,), "scale", lambda g: (g * factor,))


def transpose(a, axes: Optional[Sequence[int]] = None) -> Tensor:
    a = as_tensor(a)
    axes = tuple(range(a.ndim))[::-1] if axes is None else tuple(axes)
    if sorted(axes) != list(range(a.ndim)):
        raise DimensionError("transpose", [a.shape], f"bad permutation {axes}")
    inverse = tuple(np.argsort(axes))
    return make_result(
        np.transpose(a.data, axes), (a,), "transpose", lambda g: (np.transpose(g, inverse),)
    )


def reshape(a, shape: Sequence[int]) -> Tensor:
    a = as_tensor(a)
    try:
        data = a.data.reshape(tuple(shape))
    except ValueError:
        raise DimensionError("reshape", [a.shape, tuple(shape)])
    return make_result(data, (a,), "reshape", lambda g: (g.reshape(a.shape),))


def _expand_reduced(g: np.ndarray, shape, axis, keepdims: bool) -> np.ndarray:
    if axis is not None and not keepdims:
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g, shape)


def sum_(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    return make_result(
        a.data.sum(axis=axis, keepdims=keepdims),
        (a,),
        "sum",
        lambda g: (_expand_reduced(g, a.shape, axis, keepdims),),
    )


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    data = a.data.mean(axis=axis, keepdims=keepdims)
    count = a.data.size // max(np.asarray(data).size, 1)
    return make_result(
        data,
        (a,),
        "mean",
        lambda g: (_expand_reduced(g / count, a.shape, axis, keepdims),),
    )


def softmax_lastdim(a) -> Tensor:
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        return (s * (g - (g * s).sum(axis=-1, keepdims=True)),)

    return make_result(s, (a,), "softmax_lastdim", backward)


def layer_norm(x, gamma, beta, eps: float = 1e-5) -> Tensor:
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise DimensionError("layer_norm", [x.shape, gamma.shape, beta.shape])
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    inv = 1.0 / np.sqrt((centered**2).mean(axis=-1, keepdims=True) + eps)
    xhat = centered * inv

    def backward(g):
        gxhat = g * gamma.data
        gx = inv * (
            gxhat
            - gxhat.mean(axis=-1, keepdims=True)
            - xhat * (gxhat * xhat).mean(axis=-1, keepdims=True)
        )
        flat_g = g.reshape(-1, d)
        return gx, (flat_g * xhat.reshape(-1, d)).sum(axis=0), flat_g.sum(axis=0)

    return make_result(xhat * gamma.data + beta.data, (x, gamma, beta), "layer_norm", backward)


def gelu(a) -> Tensor:
    """Tanh approximation of GELU."""
    a = as_tensor(a)
    x = a.data
    th = np.tanh(GELU_C * (x + 0.044715 * x**3))

    def backward(g):
        dth = (1.0 - th**2) * GELU_C * (1.0 + 3 * 0.044715 * x**2)
        return (g * (0.5 * (1.0 + th) + 0.5 * x * dth),)

    return make_result(0.5 * x * (1.0 + th), (a,), "gelu", backward)


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ContractError("concat needs at least one input")
    try:
        data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise DimensionError("concat", [t.shape for t in tensors])
    cuts = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return make_result(data, tensors, "concat", lambda g: tuple(np.split(g, cuts, axis=axis)))


def slice_(a, index) -> Tensor:
    a = as_tensor(a)
    try:
        data = a.data[index]
    except IndexError:
        raise DimensionError("slice", [a.shape], f"index {index!r}")

    def backward(g):
        full = np.zeros_like(a.data)
        np.add.at(full, index, g)
        return (full,)

    return make_result(np.array(data), (a,), "slice", backward)


def embed_lookup(table, ids) -> Tensor:
    table = as_tensor(table)
    ids = np.asarray(ids)
    if table.ndim != 2 or not np.issubdtype(ids.dtype, np.integer):
        raise DimensionError("embed_lookup", [table.shape, ids.shape], "integer ids into 2-D table")
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise DimensionError("embed_lookup", [table.shape, ids.shape], "id out of range")

    def backward(g):
        full = np.zeros_like(table.data)
        np.add.at(full, ids, g)
        return (full,)

    return make_result(table.data[ids], (table,), "embed_lookup", backward)


def mse(pred, target) -> Tensor:
    pred, target = as_tensor(pred), as_tensor(target)
    if pred.shape != target.shape:
        raise DimensionError("mse", [pred.shape, target.shape])
    diff = pred.data - target.data
    n = diff.size

    def backward(g):
        gp = g * 2.0 * diff / n
        return gp, -gp

    return make_result(np.mean(diff**2), (pred, target), "mse", backward)


def cross_entropy(logits, targets) -> Tensor:
    """Mean negative log-likelihood of integer ``targets`` under ``logits[..., K]``."""
    logits = as_tensor(logits)
    targets = np.asarray(targets)
    if logits.shape[:-1] != targets.shape:
        raise DimensionError("cross_entropy", [logits.shape, targets.shape])
    k = logits.shape[-1]
    flat = logits.data.reshape(-1, k)
    flat_t = targets.reshape(-1)
    if flat_t.size and (flat_t.min() < 0 or flat_t.max() >= k):
        raise DimensionError("cross_entropy", [logits.shape, targets.shape], "target out of range")
    shifted = flat - flat.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_p = shifted - log_z
    rows = np.arange(flat_t.size)
    n = flat_t.size

    def backward(g):
        grad = np.exp(log_p)
        grad[rows, flat_t] -= 1.0
        return ((g / n) * grad.reshape(logits.shape),)

    return make_result(-log_p[rows, flat_t].mean(), (logits,), "cross_entropy", backward)


def _check_indices(op: str, x: Tensor, idx: np.ndarray, width: int) -> None:
    if idx.ndim != 1 or idx.size == 0 or len(np.unique(idx)) != idx.size:
        raise DimensionError(op, [x.shape, idx.shape], "indices must be unique and 1-D")
    if idx.min() < 0 or idx.max() >= width:
        raise DimensionError(op, [x.shape, idx.shape], "index out of range")


def index_add(base, indices, low) -> Tensor:
    """``base`` with ``low`` added into last-axis ``indices``; other coordinates untouched."""
    base, low = as_tensor(base), as_tensor(low)
    idx = np.asarray(indices, dtype=np.int64)
    _check_indices("index_add", base, idx, base.shape[-1])
    if low.shape[:-1] != base.shape[:-1] or low.shape[-1] != idx.size:
        raise DimensionError("index_add", [base.shape, low.shape])
    out = base.data.copy()
    out[..., idx] += low.data
    return make_result(out, (base, low), "index_add", lambda g: (g, g[..., idx]))


def gather_lastdim(x, indices) -> Tensor:
    x = as_tensor(x)
    idx = np.asarray(indices, dtype=np.int64)
    _check_indices("gather_lastdim", x, idx, x.shape[-1])

    def backward(g):
        full = np.zeros_like(x.data)
        full[..., idx] = g
        return (full,)

    return make_result(x.data[..., idx], (x,), "gather_lastdim", backward)


PRIMITIVES: Dict[str, callable] = {
    "matmul": matmul,
    "add": add,
    "sub": sub,
    "mul": mul,
    "scale": scale,
    "transpose": transpose,
    "reshape": reshape,
    "sum": sum_,
    "mean": mean,
    "softmax_lastdim": softmax_lastdim,
    "layer_norm": layer_norm,
    "gelu": gelu,
    "concat": concat,
    "slice": slice_,
    "embed_lookup": embed_lookup,
    "mse": mse,
    "cross_entropy": cross_entropy,
    "index_add": index_add,
    "gather_lastdim": gather_lastdim,
}


def apply_primitive(op_kind: str, *inputs, **kwargs) -> Tensor:
    """Apply a primitive by name, e.g. ``apply_primitive("matmul", a, b)``."""
    fn = PRIMITIVES.get(op_kind)
    if fn is None:
        raise ContractError(f"Unknown primitive: {op_kind}")
    return fn(*inputs, **kwargs)
