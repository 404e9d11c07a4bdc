"""
Diffusion loss and the shared training loop.

``fit_diffusion`` is used both for pretraining (all parameters) and for
adapter fine-tuning (adapter factors only); callers pass the trainable list
and an optional per-step check.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from tqdm import tqdm

from ..autograd import ops
from ..autograd.optim import AdamW
from ..autograd.tensor import Parameter, Tensor
from ..errors import ContractError, DivergenceError
from ..world.prompts import NULL, prompt_for_image
from ..world.scene import LabeledImage
from .denoiser import TinyDenoiser, prompt_ids
from .schedule import NoiseSchedule, add_noise, to_model_space

logger = logging.getLogger(__name__)


@dataclass
class TrainResult:
    losses: List[float] = field(default_factory=list)
    dropped_prompts: int = 0
    prompts_seen: int = 0

    def window_means(self, window: int = 50) -> Tuple[float, float]:
        """Mean loss over the first and last ``window`` iterations."""
        if not self.losses:
            return math.nan, math.nan
        w = max(1, min(window, len(self.losses) // 2 or 1))
        return float(np.mean(self.losses[:w])), float(np.mean(self.losses[-w:]))

    def to_dict(self):
        first, last = self.window_means()
        return {
            "iterations": len(self.losses),
            "first_window_loss": first,
            "last_window_loss": last,
            "null_prompt_fraction": self.dropped_prompts / max(self.prompts_seen, 1),
        }


def apply_prompt_dropout(ids: np.ndarray, p: float, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    """Replace each prompt row with all-NULL with probability ``p``."""
    dropped = rng.random(ids.shape[0]) < p
    out = ids.copy()
    out[dropped] = NULL
    return out, dropped


def diffusion_loss(
    model: TinyDenoiser,
    x0: np.ndarray,
    prompts,
    sched: Optional[NoiseSchedule] = None,
    rng: Optional[np.random.Generator] = None,
    t: Optional[np.ndarray] = None,
    eps: Optional[np.ndarray] = None,
) -> Tensor:
    """
    MSE between predicted and added noise.

    ``t`` and ``eps`` are drawn from ``rng`` unless given (t uniform on [1, T]).
    ``x0`` is in model space.
    """
    sched = sched or model.schedule
    x0 = np.asarray(x0, dtype=np.float64)
    if x0.shape[0] == 0:
        raise ContractError("diffusion_loss needs a non-empty batch")
    b = x0.shape[0]
    if t is None or eps is None:
        if rng is None:
            raise ContractError("diffusion_loss needs rng when t or eps is not given")
        if t is None:
            t = rng.integers(1, sched.T + 1, size=b)
        if eps is None:
            eps = rng.standard_normal(x0.shape)
    x_t = add_noise(x0, eps, t, sched)
    pred, _ = model(x_t, t, prompts)
    return ops.mse(pred, Tensor(eps))


def fit_diffusion(
    model: TinyDenoiser,
    images: np.ndarray,
    ids: np.ndarray,
    params: Sequence[Parameter],
    iterations: int,
    batch_size: int,
    lr: float,
    null_prompt_dropout: float,
    seed: int,
    weight_decay: float = 0.0,
    stage: str = "train",
    after_step: Optional[Callable[[int], None]] = None,
    progress: bool = False,
) -> TrainResult:
    """Minibatch AdamW on the diffusion loss over model-space ``images`` with prompt ``ids``."""
    if len(images) == 0:
        raise ContractError(f"{stage}: dataset is empty")
    rng = np.random.default_rng(seed)
    opt = AdamW(params, lr=lr, weight_decay=weight_decay)
    result = TrainResult()
    logger.info(f"{stage}: {iterations} iterations, batch {batch_size}, {len(params)} tensors, lr {lr}")
    for it in tqdm(range(iterations), desc=stage, disable=not progress):
        idx = rng.integers(0, len(images), size=batch_size)
        batch_ids, dropped = apply_prompt_dropout(ids[idx], null_prompt_dropout, rng)
        result.dropped_prompts += int(dropped.sum())
        result.prompts_seen += batch_size
        opt.zero_grad()
        loss = diffusion_loss(model, images[idx], batch_ids, rng=rng)
        value = loss.item()
        if not np.isfinite(value):
            raise DivergenceError(stage, it, value)
        loss.backward()
        opt.step()
        if after_step is not None:
            after_step(it)
        result.losses.append(value)
        if it % 100 == 0:
            logger.debug(f"{stage} iteration {it}: loss {value:.5f}")
    if result.losses:
        first, last = result.window_means()
        logger.info(f"{stage}: loss {first:.4f} -> {last:.4f}")
    return result


def training_arrays(dataset: Sequence[LabeledImage]) -> Tuple[np.ndarray, np.ndarray]:
    """Model-space images and their label-derived prompts."""
    if not dataset:
        raise ContractError("training set is empty")
    images = to_model_space(np.stack([item.image for item in dataset]))
    ids = prompt_ids([prompt_for_image(item) for item in dataset], len(dataset))
    return images, ids


def train_diffusion(model: TinyDenoiser, dataset: Sequence[LabeledImage], config, seed: int,
                    progress: bool = False) -> TrainResult:
    """
    Pretrain every parameter of ``model`` on ``dataset``.

    ``config`` carries iterations, batch_size, lr, weight_decay and
    null_prompt_dropout (see ``calora.config.PretrainConfig``).
    """
    if not dataset:
        raise ContractError("train_diffusion: dataset is empty")
    images, ids = training_arrays(dataset)
    model.requires_grad_(True)
    result = fit_diffusion(
        model,
        images,
        ids,
        model.parameters(),
        iterations=config.iterations,
        batch_size=config.batch_size,
        lr=config.lr,
        null_prompt_dropout=config.null_prompt_dropout,
        seed=seed,
        weight_decay=config.weight_decay,
        stage="pretrain",
        progress=progress,
    )
    if config.null_prompt_dropout > 0 and config.iterations > 0:
        model.trained_with_null_dropout = True
    return result
