"""
Tiny conditional pixel-space diffusion: schedule, denoiser, training,
guided sampling, feature taps and checkpoints.
"""

from .checkpoint import load_checkpoint, save_checkpoint
from .denoiser import ATTENTION_KINDS, DenoiserConfig, TinyDenoiser, denoiser_forward
from .extract import extract_features, extract_features_batch
from .features import GenerativeFeatures
from .routing import make_routed_denoiser
from .sampling import ddim_timesteps, sample_cfg, sample_cfg_batch, sample_many, sample_unconditional
from .schedule import NoiseSchedule, add_noise, make_schedule, to_model_space, to_pixel_space
from .training import (
    TrainResult,
    apply_prompt_dropout,
    diffusion_loss,
    fit_diffusion,
    train_diffusion,
    training_arrays,
)

__all__ = [
    "ATTENTION_KINDS",
    "DenoiserConfig",
    "GenerativeFeatures",
    "NoiseSchedule",
    "TinyDenoiser",
    "TrainResult",
    "add_noise",
    "apply_prompt_dropout",
    "ddim_timesteps",
    "denoiser_forward",
    "diffusion_loss",
    "extract_features",
    "extract_features_batch",
    "fit_diffusion",
    "load_checkpoint",
    "make_routed_denoiser",
    "make_schedule",
    "sample_cfg",
    "sample_cfg_batch",
    "sample_many",
    "sample_unconditional",
    "save_checkpoint",
    "to_model_space",
    "to_pixel_space",
    "train_diffusion",
    "training_arrays",
]
