"""Concept-aware low-rank adapters."""

from .adapter import ADAPTER_KINDS, CALoRAAdapter, adapted_projection_forward, adapter_kind, merge_delta
from .attach import (
    adapter_parameters,
    attach_adapters,
    detach_adapters,
    install_adapters,
    load_adapters,
    save_adapters,
    selected_heads,
)
from .finetune import finetune_lora

__all__ = [
    "ADAPTER_KINDS",
    "CALoRAAdapter",
    "adapted_projection_forward",
    "adapter_kind",
    "merge_delta",
    "adapter_parameters",
    "attach_adapters",
    "detach_adapters",
    "install_adapters",
    "load_adapters",
    "save_adapters",
    "selected_heads",
    "finetune_lora",
]
