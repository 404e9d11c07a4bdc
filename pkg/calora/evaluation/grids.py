"""Lossless image grids for side-by-side qualitative comparison."""

from pathlib import Path
from typing import Sequence

import cv2
import numpy as np

from ..errors import ContractError


def save_image_grid(rows: Sequence[np.ndarray], path, pad: int = 2, scale: int = 2) -> Path:
    """
    One grid row per (N, H, W, 3) array in [0, 1]; short rows are padded white.
    """
    if not rows:
        raise ContractError("save_image_grid needs at least one row")
    h, w = rows[0].shape[1:3]
    cols = max(len(r) for r in rows)
    grid = np.ones((len(rows) * (h + pad) + pad, cols * (w + pad) + pad, 3))
    for i, row in enumerate(rows):
        for j, img in enumerate(row):
            y, x = pad + i * (h + pad), pad + j * (w + pad)
            grid[y : y + h, x : x + w] = np.clip(img, 0.0, 1.0)
    rgb = np.round(grid * 255.0).astype(np.uint8)
    if scale > 1:
        rgb = cv2.resize(rgb, None, fx=scale, fy=scale, interpolation=cv2.INTER_NEAREST)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    cv2.imwrite(str(path), cv2.cvtColor(rgb, cv2.COLOR_RGB2BGR))
    return path
