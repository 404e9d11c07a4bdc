"""
Shared fixtures: tiny denoisers and small rendered datasets.
"""

import numpy as np
import pytest

from calora.diffusion import DenoiserConfig, TinyDenoiser
from calora.world import prompt_of, sample_dataset


@pytest.fixture
def tiny_config():
    """Width-8, two-head, one-block denoiser config."""
    return DenoiserConfig(width=8, heads=2, blocks=1, timesteps=20)


@pytest.fixture
def small_config():
    """Width-16 two-block config, big enough for head-restricted adapters."""
    return DenoiserConfig(width=16, heads=2, blocks=2, timesteps=50)


@pytest.fixture
def tiny_model(tiny_config):
    return TinyDenoiser(tiny_config, seed=0)


@pytest.fixture
def small_model(small_config):
    return TinyDenoiser(small_config, seed=1)


@pytest.fixture
def source_items():
    return sample_dataset("clearday", "driving", 6, seed=3)


@pytest.fixture
def base_prompt():
    return prompt_of("clearday", "driving", ["road", "sky"])


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
