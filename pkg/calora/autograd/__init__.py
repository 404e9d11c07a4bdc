"""
Reverse-mode autodiff on float64 numpy arrays.

Define-by-run tape, the primitive set needed by a small attention denoiser,
per-head weight chunking, modules and an AdamW optimizer.
"""

from .gradcheck import check_gradients
from .heads import PROJECTION_KINDS, ProjectionShape, chunk_per_head, split_axis
from .module import LayerNorm, Linear, Module, ModuleList, interpolation_matrix, upsample_bilinear
from .ops import PRIMITIVES, apply_primitive
from .optim import Adam, AdamW
from .tensor import (
    Parameter,
    Tensor,
    as_tensor,
    backward,
    is_grad_enabled,
    no_grad,
    stop_gradient,
)

__all__ = [
    "Adam",
    "AdamW",
    "LayerNorm",
    "Linear",
    "Module",
    "ModuleList",
    "PRIMITIVES",
    "PROJECTION_KINDS",
    "Parameter",
    "ProjectionShape",
    "Tensor",
    "apply_primitive",
    "as_tensor",
    "backward",
    "check_gradients",
    "chunk_per_head",
    "interpolation_matrix",
    "is_grad_enabled",
    "no_grad",
    "split_axis",
    "stop_gradient",
    "upsample_bilinear",
]
