"""Linear-beta noise schedule and forward noising."""

from dataclasses import dataclass
from typing import Union

import numpy as np

from ..errors import ContractError, DimensionError

BETA_START = 1e-4
BETA_END = 0.02


@dataclass(frozen=True, eq=False)
class NoiseSchedule:
    """``alpha_bar[t - 1]`` is the cumulative signal fraction at timestep ``t`` (1-based)."""

    T: int
    betas: np.ndarray
    alpha_bar: np.ndarray

    def check_timestep(self, t) -> np.ndarray:
        t = np.asarray(t)
        if not np.issubdtype(t.dtype, np.integer) or t.size == 0 or t.min() < 1 or t.max() > self.T:
            raise ContractError(f"timestep {t.tolist()} outside [1, {self.T}]")
        return t

    def alpha_bar_at(self, t) -> np.ndarray:
        return self.alpha_bar[self.check_timestep(t) - 1]

    def to_dict(self):
        return {"T": self.T, "beta_start": float(self.betas[0]), "beta_end": float(self.betas[-1])}


def make_schedule(T: int) -> NoiseSchedule:
    if T < 2:
        raise ContractError(f"T must be >= 2, got {T}")
    betas = np.linspace(BETA_START, BETA_END, T)
    return NoiseSchedule(T=T, betas=betas, alpha_bar=np.cumprod(1.0 - betas))


def add_noise(x0: np.ndarray, eps: np.ndarray, t: Union[int, np.ndarray], sched: NoiseSchedule) -> np.ndarray:
    """``sqrt(ab_t) * x0 + sqrt(1 - ab_t) * eps``; ``t`` is a scalar or one timestep per batch item."""
    x0 = np.asarray(x0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if x0.shape != eps.shape:
        raise DimensionError("add_noise", [x0.shape, eps.shape])
    ab = sched.alpha_bar_at(t)
    if ab.ndim == 1:
        if ab.shape[0] != x0.shape[0]:
            raise DimensionError("add_noise", [x0.shape, ab.shape], "one timestep per batch item")
        ab = ab.reshape((-1,) + (1,) * (x0.ndim - 1))
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps


def to_model_space(images: np.ndarray) -> np.ndarray:
    """[0, 1] pixels to the [-1, 1] range the denoiser works in."""
    return 2.0 * np.asarray(images, dtype=np.float64) - 1.0


def to_pixel_space(x: np.ndarray) -> np.ndarray:
    return np.clip((x + 1.0) / 2.0, 0.0, 1.0)
