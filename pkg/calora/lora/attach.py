"""Attaching, saving and loading CA-LoRA adapters on a denoiser."""

import logging
from collections import defaultdict
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from ..autograd.heads import ProjectionShape
from ..autograd.tensor import Parameter
from ..binfmt import read_container, write_container
from ..diffusion.denoiser import TinyDenoiser
from ..errors import ContractError
from ..sensitivity.maps import SelectionMask
from ..sensitivity.units import UnitId, expand_to_heads
from .adapter import CALoRAAdapter, adapter_kind

logger = logging.getLogger(__name__)

ADAPTER_MAGIC = b"CALRLORA"


def selected_heads(model: TinyDenoiser, mask: SelectionMask) -> Dict[Tuple[int, str, str], List[int]]:
    """Selected head indices per (block, attention, projection), canonical order."""
    c = model.config
    grouped: Dict[Tuple[int, str, str], List[int]] = defaultdict(list)
    for unit in expand_to_heads(mask.units, c.blocks, c.heads):
        grouped[(unit.block, unit.attention, unit.projection)].append(unit.head)
    return dict(grouped)


def attach_adapters(
    model: TinyDenoiser,
    mask: SelectionMask,
    rank: int,
    alpha: float = 1.0,
    seed: int = 0,
) -> Dict[str, CALoRAAdapter]:
    """
    Attach one adapter per projection touched by ``mask`` and freeze the base.

    Returns adapters keyed by projection unit id (``b0.cross.V``). An empty
    mask leaves the model untouched.
    """
    groups = selected_heads(model, mask)
    if not groups:
        logger.info("Empty selection mask: no adapters attached")
        return {}
    rng = np.random.default_rng(seed)
    adapters = {}
    for (b, a, k), heads in groups.items():
        unit = str(UnitId(b, a, k))
        if model.projection(b, a, k).adapter is not None:
            raise ContractError(f"{unit} already has an adapter")
        adapters[unit] = CALoRAAdapter(
            adapter_kind(k), model.projection_shape(b, a, k), heads, rank, alpha, rng, unit
        )
    install_adapters(model, adapters)
    n_params = sum(p.data.size for p in adapter_parameters(model))
    logger.info(f"Attached {len(adapters)} adapters ({n_params} trainable values) at rank {rank}")
    return adapters


def install_adapters(model: TinyDenoiser, adapters: Dict[str, CALoRAAdapter]) -> None:
    """Hook ``adapters`` into their projections; base frozen, factors trainable."""
    for unit, adapter in adapters.items():
        u = UnitId.parse(unit)
        if adapter.shape != model.projection_shape(u.block, u.attention, u.projection):
            raise ContractError(f"adapter {unit} does not fit this model's projection")
    model.requires_grad_(False)
    for unit, adapter in adapters.items():
        u = UnitId.parse(unit)
        model.projection(u.block, u.attention, u.projection).adapter = adapter
        adapter.requires_grad_(True)


def detach_adapters(model: TinyDenoiser) -> None:
    for b, a, k in model.projection_units():
        model.projection(b, a, k).adapter = None


def adapter_parameters(model: TinyDenoiser) -> List[Parameter]:
    return [p for name, p in model.named_parameters() if ".adapter." in name]


def save_adapters(adapters: Dict[str, CALoRAAdapter], path, meta: Optional[Dict[str, Any]] = None) -> Path:
    arrays = {}
    for unit, adapter in adapters.items():
        arrays[f"{unit}.A"] = adapter.A.data
        arrays[f"{unit}.B"] = adapter.B.data
    header = {"kind": "ca-lora", "adapters": [a.header() for a in adapters.values()], "meta": meta or {}}
    write_container(path, ADAPTER_MAGIC, header, arrays)
    logger.info(f"Saved {len(adapters)} adapters to {path}")
    return Path(path)


def load_adapters(path) -> Tuple[Dict[str, CALoRAAdapter], Dict[str, Any]]:
    """Adapters from ``path``; install them with :func:`install_adapters`."""
    header, arrays = read_container(path, ADAPTER_MAGIC)
    adapters = {}
    for entry in header["adapters"]:
        unit = entry["unit"]
        adapter = CALoRAAdapter(
            entry["kind"], ProjectionShape(*entry["shape"]), entry["heads"],
            int(entry["rank"]), float(entry["alpha"]), unit=unit,
        )
        if adapter.indices.tolist() != entry["indices"]:
            raise ContractError(f"{path}: index list of {unit} does not match its heads")
        adapter.load_state_dict({"A": arrays[f"{unit}.A"], "B": arrays[f"{unit}.B"]})
        adapters[unit] = adapter
    return adapters, header.get("meta", {})
