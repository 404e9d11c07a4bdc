"""Generative features captured from one denoiser pass."""

from dataclasses import dataclass
from typing import List

import numpy as np


@dataclass
class GenerativeFeatures:
    """
    Per-block taps on a (B, ...) batch.

    feature_maps: block outputs as (B, 8, 8, width) grids.
    cross_attn_maps: cross-attention weights averaged over heads, (B, 8, 8, L),
        summing to 1 over the L prompt tokens at every location.
    """

    feature_maps: List[np.ndarray]
    cross_attn_maps: List[np.ndarray]

    @property
    def batch_size(self) -> int:
        return self.feature_maps[0].shape[0]

    def item(self, i: int) -> "GenerativeFeatures":
        return GenerativeFeatures(
            feature_maps=[f[i : i + 1] for f in self.feature_maps],
            cross_attn_maps=[a[i : i + 1] for a in self.cross_attn_maps],
        )

    @classmethod
    def concat(cls, parts: List["GenerativeFeatures"]) -> "GenerativeFeatures":
        return cls(
            feature_maps=[np.concatenate(fs) for fs in zip(*(p.feature_maps for p in parts))],
            cross_attn_maps=[np.concatenate(a) for a in zip(*(p.cross_attn_maps for p in parts))],
        )
