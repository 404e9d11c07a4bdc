"""Feature extraction from noised real images."""

from typing import Sequence

import numpy as np

from ..autograd.tensor import no_grad
from ..world.prompts import PromptTokens
from .denoiser import TinyDenoiser
from .features import GenerativeFeatures
from .schedule import add_noise, to_model_space


def extract_features_batch(
    model: TinyDenoiser,
    images: np.ndarray,
    t_feat: int,
    prompts: Sequence[PromptTokens],
    eps_seeds: Sequence[int],
) -> GenerativeFeatures:
    """Noise each [0, 1] image at ``t_feat`` with its own seeded noise and run one pass."""
    images = np.asarray(images, dtype=np.float64)
    model.schedule.check_timestep(t_feat)
    x0 = to_model_space(images)
    eps = np.stack([np.random.default_rng(s).standard_normal(x0.shape[1:]) for s in eps_seeds])
    x_t = add_noise(x0, eps, t_feat, model.schedule)
    with no_grad():
        _, features = model(x_t, t_feat, list(prompts))
    return features


def extract_features(
    model: TinyDenoiser,
    image: np.ndarray,
    t_feat: int,
    prompt: PromptTokens,
    eps_seed: int,
) -> GenerativeFeatures:
    return extract_features_batch(model, np.asarray(image)[None], t_feat, [prompt], [eps_seed])
