"""
Denoisers with hard-routed prompt pathways.

``make_routed_denoiser`` builds a model in which a chosen set of prompt
tokens can reach the output through exactly one cross-attention head: every
other cross-attention head masks those tokens out of its keys and has its
output columns zeroed.
"""

from typing import Iterable, Optional

import numpy as np

from ..errors import ContractError
from ..world.prompts import style_token
from ..world.scene import STYLES
from .denoiser import DenoiserConfig, TinyDenoiser


def make_routed_denoiser(
    config: DenoiserConfig,
    block: int,
    head: int,
    tokens: Optional[Iterable[int]] = None,
    seed: int = 0,
    gain: float = 3.0,
) -> TinyDenoiser:
    """``tokens`` defaults to every style token; ``gain`` scales the routed head's V/OUT slices."""
    if not 0 <= block < config.blocks or not 0 <= head < config.heads:
        raise ContractError(f"head ({block}, {head}) does not exist")
    tokens = list(tokens) if tokens is not None else [style_token(s) for s in STYLES]
    model = TinyDenoiser(config, seed=seed)
    mask = np.ones((config.blocks, config.heads, config.vocab_size), dtype=bool)
    mask[:, :, tokens] = False
    mask[block, head, tokens] = True
    model.key_mask = mask

    dh = config.dim_head
    for b in range(config.blocks):
        attn = model.blocks[b].attn_cross
        for h in range(config.heads):
            cols = slice(h * dh, (h + 1) * dh)
            if (b, h) == (block, head):
                attn.to_v.weight.data[cols, :] *= gain
                attn.to_out.weight.data[:, cols] *= gain
            else:
                attn.to_out.weight.data[:, cols] = 0.0
    return model
