"""
Projection-wise low-rank adapters restricted to selected attention heads.

IN kind (Q/K/V): shared ``A`` (r x d_in), restricted ``B`` (|idx| x r); the
low-rank product is added into the selected output coordinates only.

OUT kind: restricted ``A`` (r x |idx|), shared ``B`` (d_out x r); only the
selected input coordinates feed the low-rank path.

``idx`` concatenates ``[dim_head*h, dim_head*(h+1))`` over the selected heads.
"""

from typing import Optional, Sequence

import numpy as np

from ..autograd import ops
from ..autograd.heads import ProjectionShape, check_projection_kind
from ..autograd.module import Linear, Module
from ..autograd.tensor import Parameter, Tensor
from ..errors import ContractError

ADAPTER_KINDS = ("IN", "OUT")


def adapter_kind(projection: str) -> str:
    return "OUT" if check_projection_kind(projection) == "OUT" else "IN"


def head_indices(shape: ProjectionShape, heads: Sequence[int]) -> np.ndarray:
    heads = sorted(int(h) for h in heads)
    if not heads or len(set(heads)) != len(heads):
        raise ContractError(f"head list must be non-empty and unique, got {heads}")
    if heads[0] < 0 or heads[-1] >= shape.heads:
        raise ContractError(f"heads {heads} outside [0, {shape.heads})")
    return np.concatenate([shape.head_indices(h) for h in heads])


class CALoRAAdapter(Module):
    def __init__(
        self,
        kind: str,
        shape: ProjectionShape,
        heads: Sequence[int],
        rank: int,
        alpha: float = 1.0,
        rng: Optional[np.random.Generator] = None,
        unit: str = "",
    ):
        super().__init__()
        if kind not in ADAPTER_KINDS:
            raise ContractError(f"adapter kind must be one of {ADAPTER_KINDS}, got {kind!r}")
        self.kind = kind
        self.shape = shape
        self.heads = sorted(int(h) for h in heads)
        self.indices = head_indices(shape, self.heads)
        self.rank = rank
        self.alpha = alpha
        self.unit = unit
        restricted = len(self.indices)
        if not 1 <= rank <= restricted:
            raise ContractError(
                f"{unit or kind}: rank {rank} must be in [1, {restricted}] for {len(self.heads)} selected head(s)"
            )
        rng = rng or np.random.default_rng(0)
        std = 1.0 / rank
        if kind == "IN":
            self.A = Parameter(rng.normal(0.0, std, size=(rank, shape.d_in)))
            self.B = Parameter(np.zeros((restricted, rank)))
        else:
            self.A = Parameter(rng.normal(0.0, std, size=(rank, restricted)))
            self.B = Parameter(np.zeros((shape.d_out, rank)))

    def low_rank(self, x) -> Tensor:
        if self.kind == "OUT":
            x = ops.gather_lastdim(x, self.indices)
        h = ops.matmul(x, ops.transpose(self.A, (1, 0)))
        return ops.scale(ops.matmul(h, ops.transpose(self.B, (1, 0))), self.alpha)

    def forward(self, x, base_out: Tensor) -> Tensor:
        if self.kind == "IN":
            return ops.index_add(base_out, self.indices, self.low_rank(x))
        return ops.add(base_out, self.low_rank(x))

    def header(self) -> dict:
        return {
            "unit": self.unit,
            "kind": self.kind,
            "heads": self.heads,
            "indices": self.indices.tolist(),
            "rank": self.rank,
            "alpha": self.alpha,
            "shape": [self.shape.d_out, self.shape.d_in, self.shape.heads, self.shape.dim_head],
        }


def merge_delta(adapter: CALoRAAdapter, shape: Optional[ProjectionShape] = None) -> np.ndarray:
    """Dense ``delta W`` (d_out x d_in) equivalent to the adapter's low-rank path."""
    shape = shape or adapter.shape
    if shape != adapter.shape:
        raise ContractError(f"adapter built for {adapter.shape}, not {shape}")
    delta = np.zeros((shape.d_out, shape.d_in))
    product = adapter.alpha * (adapter.B.data @ adapter.A.data)
    if adapter.kind == "IN":
        delta[adapter.indices, :] = product
    else:
        delta[:, adapter.indices] = product
    return delta


def adapted_projection_forward(x, linear: Linear, adapter: Optional[CALoRAAdapter] = None) -> Tensor:
    """Base projection of ``x`` plus the adapter's routed contribution."""
    y = linear.base_forward(x)
    adapter = adapter if adapter is not None else linear.adapter
    return y if adapter is None else adapter(x, y)
