"""
Attention projection shapes and per-head weight chunking.

Q/K/V projections are split along output rows, OUT projections along input
columns, one block per head.
"""

from dataclasses import dataclass
from typing import List

import numpy as np

from ..errors import ContractError
from .tensor import Tensor

PROJECTION_KINDS = ("Q", "K", "V", "OUT")


def check_projection_kind(kind: str) -> str:
    if kind not in PROJECTION_KINDS:
        raise ContractError(f"projection kind must be one of {PROJECTION_KINDS}, got {kind!r}")
    return kind


def split_axis(kind: str) -> int:
    """0 (rows) for Q/K/V, 1 (columns) for OUT."""
    return 1 if check_projection_kind(kind) == "OUT" else 0


@dataclass(frozen=True)
class ProjectionShape:
    d_out: int
    d_in: int
    heads: int
    dim_head: int

    def validate(self, kind: str) -> None:
        headed = self.d_in if split_axis(kind) == 1 else self.d_out
        if headed != self.heads * self.dim_head:
            raise ContractError(
                f"{kind} projection {self.d_out}x{self.d_in} does not hold "
                f"{self.heads} heads of width {self.dim_head}"
            )

    def head_indices(self, head: int) -> np.ndarray:
        return np.arange(self.dim_head * head, self.dim_head * (head + 1))


def chunk_per_head(weight_grad, shape: ProjectionShape, kind: str) -> List[np.ndarray]:
    """Split a (d_out, d_in) gradient into ``shape.heads`` per-head blocks."""
    g = weight_grad.data if isinstance(weight_grad, Tensor) else np.asarray(weight_grad)
    axis = split_axis(kind)
    if g.shape != (shape.d_out, shape.d_in):
        raise ContractError(f"gradient shape {g.shape} does not match ({shape.d_out}, {shape.d_in})")
    if shape.heads < 1 or g.shape[axis] % shape.heads != 0:
        raise ContractError(f"{shape.heads} heads do not divide axis {axis} of {g.shape}")
    return np.split(g, shape.heads, axis=axis)
