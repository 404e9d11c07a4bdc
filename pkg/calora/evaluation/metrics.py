"""
Set-level and mask-level metrics.

All functions are pure: same arrays in, same numbers out.
"""

import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy.spatial.distance import cdist, pdist

from ..errors import ContractError
from ..world.scene import NUM_CLASSES

logger = logging.getLogger(__name__)


def _flatten(images) -> np.ndarray:
    x = np.asarray(images, dtype=np.float64)
    return x.reshape(len(x), -1)


def rbf_kernel(x: np.ndarray, y: np.ndarray, bandwidth: float) -> np.ndarray:
    return np.exp(-cdist(x, y, "sqeuclidean") / (2.0 * bandwidth**2))


def median_bandwidth(x: np.ndarray, y: np.ndarray) -> float:
    """Median pairwise distance over the pooled set; 1.0 if that median is zero."""
    med = float(np.median(pdist(np.concatenate([x, y]))))
    return med if med > 0 else 1.0


def _offdiag_sum(k: np.ndarray) -> float:
    return float(k.sum() - np.trace(k))


def mmd_alignment(gen_images, real_images, bandwidth: Optional[float] = None) -> float:
    """
    Unbiased squared MMD between two image sets with an RBF kernel on pixels.

    Equal-size sets use the paired U-statistic, which drops the i == j terms
    of the cross kernel too, so identical sets score exactly 0.
    """
    x, y = _flatten(gen_images), _flatten(real_images)
    m, n = len(x), len(y)
    if m < 2 or n < 2:
        raise ContractError(f"MMD needs at least 2 samples per set, got {m} and {n}")
    if x.shape[1] != y.shape[1]:
        raise ContractError(f"image sizes differ: {x.shape[1]} vs {y.shape[1]} values")
    bw = median_bandwidth(x, y) if bandwidth is None else float(bandwidth)
    if bw <= 0:
        raise ContractError(f"bandwidth must be positive, got {bw}")
    kxy = rbf_kernel(x, y, bw)
    within = _offdiag_sum(rbf_kernel(x, x, bw)) / (m * (m - 1)) + _offdiag_sum(rbf_kernel(y, y, bw)) / (n * (n - 1))
    if m == n:
        cross = 0.5 * (_offdiag_sum(kxy) + _offdiag_sum(kxy.T)) / (m * (m - 1))
    else:
        cross = 0.5 * (float(kxy.sum()) + float(kxy.T.sum())) / (m * n)
    value = within - 2.0 * cross
    logger.debug(f"MMD raw {value:.6g} (bandwidth {bw:.4g}, {m} vs {n} samples)")
    return value


# =============================================================================
# Masks
# =============================================================================


def miou(pred, target, num_classes: int = NUM_CLASSES) -> Tuple[float, np.ndarray]:
    """
    Mean IoU over classes, pooled over every pixel of ``pred``/``target``.

    Classes absent from both are NaN in the per-class array and excluded
    from the mean.
    """
    pred, target = np.asarray(pred), np.asarray(target)
    if pred.shape != target.shape:
        raise ContractError(f"mask shapes differ: {pred.shape} vs {target.shape}")
    per_class = np.full(num_classes, np.nan)
    for k in range(num_classes):
        p, t = pred == k, target == k
        union = np.logical_or(p, t).sum()
        if union:
            per_class[k] = np.logical_and(p, t).sum() / union
    present = per_class[~np.isnan(per_class)]
    return (float(present.mean()) if present.size else float("nan")), per_class


def image_label_alignment(pairs, oracle) -> float:
    """mIoU of the pairs' masks against the oracle segmenter's masks on the same images."""
    if not pairs:
        raise ContractError("image_label_alignment needs at least one pair")
    images = np.stack([p.image for p in pairs])
    masks = np.stack([p.mask for p in pairs])
    return miou(masks, oracle.predict(images), oracle.num_classes)[0]


@dataclass
class MemorizationResult:
    mean: float
    p05: float
    distances: np.ndarray

    def to_dict(self):
        return {"mean": self.mean, "p05": self.p05, "n": int(len(self.distances))}


def memorization_distance(gen_images, train_images) -> MemorizationResult:
    """Nearest-neighbour L2 from each generated image to the training set."""
    x, y = _flatten(gen_images), _flatten(train_images)
    if not len(x) or not len(y):
        raise ContractError("memorization_distance needs non-empty sets")
    d = cdist(x, y, "euclidean").min(axis=1)
    return MemorizationResult(float(d.mean()), float(np.percentile(d, 5)), d)
