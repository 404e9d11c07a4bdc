"""
Deterministic DDIM-style sampling with classifier-free guidance.

Each sample starts from noise drawn only from its own seed; the guided
prediction is ``eps_null + guidance * (eps_cond - eps_null)``.
"""

import logging
from typing import List, Optional, Sequence

import numpy as np
from tqdm import tqdm

from ..autograd.tensor import no_grad
from ..errors import ContractError
from ..world.prompts import PromptTokens
from .denoiser import TinyDenoiser, prompt_ids
from .schedule import to_pixel_space

logger = logging.getLogger(__name__)

DEFAULT_STEPS = 25
DEFAULT_GUIDANCE = 5.0


def ddim_timesteps(T: int, steps: int) -> np.ndarray:
    """Descending, unique timesteps from T down to 1."""
    if steps < 1:
        raise ContractError(f"steps must be >= 1, got {steps}")
    ts = np.unique(np.round(np.linspace(T, 1, max(steps, 2))).astype(np.int64))[::-1]
    return ts[:steps] if steps > 1 else ts[:1]


def initial_noise(seed: int, shape=(32, 32, 3)) -> np.ndarray:
    return np.random.default_rng(seed).standard_normal(shape)


def sample_cfg_batch(
    model: TinyDenoiser,
    prompts: Sequence[PromptTokens],
    seeds: Sequence[int],
    steps: int = DEFAULT_STEPS,
    guidance: float = DEFAULT_GUIDANCE,
    progress: bool = False,
) -> np.ndarray:
    """Sample one image per (prompt, seed); returns (N, 32, 32, 3) in [0, 1]."""
    if guidance < 0:
        raise ContractError(f"guidance must be >= 0, got {guidance}")
    if len(prompts) != len(seeds):
        raise ContractError("one seed per prompt is required")
    if guidance != 0 and not model.trained_with_null_dropout:
        logger.warning("Sampling with guidance from a model not trained with null-prompt dropout")
    n = len(prompts)
    c = model.config
    sched = model.schedule
    cond = prompt_ids(list(prompts), n)
    uncond = prompt_ids([PromptTokens.null()] * n, n)
    x = np.stack([initial_noise(s, (c.image_size, c.image_size, c.channels)) for s in seeds])
    timesteps = ddim_timesteps(sched.T, steps)
    x0_hat = x
    with no_grad():
        for i in tqdm(range(len(timesteps)), desc="sample", disable=not progress):
            t = int(timesteps[i])
            ab = sched.alpha_bar[t - 1]
            ab_prev = sched.alpha_bar[timesteps[i + 1] - 1] if i + 1 < len(timesteps) else 1.0
            if guidance == 0:
                eps, _ = model(x, t, uncond)
                eps = eps.data
            else:
                both, _ = model(np.concatenate([x, x]), t, np.concatenate([cond, uncond]))
                eps_c, eps_u = both.data[:n], both.data[n:]
                eps = eps_u + guidance * (eps_c - eps_u)
            x0_hat = np.clip((x - np.sqrt(1.0 - ab) * eps) / np.sqrt(ab), -1.0, 1.0)
            eps = (x - np.sqrt(ab) * x0_hat) / np.sqrt(1.0 - ab)
            x = np.sqrt(ab_prev) * x0_hat + np.sqrt(1.0 - ab_prev) * eps
    return to_pixel_space(x0_hat)


def sample_cfg(
    model: TinyDenoiser,
    prompt: PromptTokens,
    steps: int = DEFAULT_STEPS,
    guidance: float = DEFAULT_GUIDANCE,
    seed: int = 0,
) -> np.ndarray:
    return sample_cfg_batch(model, [prompt], [seed], steps, guidance)[0]


def sample_unconditional(model: TinyDenoiser, seeds: Sequence[int], steps: int = DEFAULT_STEPS) -> np.ndarray:
    return sample_cfg_batch(model, [PromptTokens.null()] * len(seeds), seeds, steps, guidance=0.0)


def sample_many(
    model: TinyDenoiser,
    prompts: Sequence[PromptTokens],
    seeds: Sequence[int],
    steps: int = DEFAULT_STEPS,
    guidance: float = DEFAULT_GUIDANCE,
    batch_size: int = 32,
    progress: bool = False,
) -> np.ndarray:
    """``sample_cfg_batch`` in fixed-size chunks, concatenated in input order."""
    chunks: List[np.ndarray] = []
    for lo in tqdm(range(0, len(prompts), batch_size), desc="generate", disable=not progress):
        chunks.append(sample_cfg_batch(model, prompts[lo : lo + batch_size], seeds[lo : lo + batch_size],
                                       steps, guidance))
    c = model.config
    return np.concatenate(chunks) if chunks else np.zeros((0, c.image_size, c.image_size, c.channels))
