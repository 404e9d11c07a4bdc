"""Adapter training on the narrow source domain with the base model frozen."""

import logging
from typing import Sequence

import numpy as np

from ..diffusion.denoiser import TinyDenoiser
from ..diffusion.training import TrainResult, fit_diffusion, training_arrays
from ..errors import ContractError, InvariantViolation
from ..world.scene import LabeledImage
from .attach import adapter_parameters

logger = logging.getLogger(__name__)


def finetune_lora(
    model: TinyDenoiser,
    dataset: Sequence[LabeledImage],
    config,
    seed: int,
    progress: bool = False,
) -> TrainResult:
    """
    Train only the adapter factors of ``model`` with the diffusion loss.

    ``config`` carries iterations, batch_size, lr, weight_decay and
    null_prompt_dropout (see ``calora.config.LoraConfig``). A gradient on any
    base parameter aborts the run.
    """
    params = adapter_parameters(model)
    if not params:
        raise ContractError("finetune_lora: model has no adapters attached")
    base = model.base_parameters()
    if any(p.requires_grad for p in base):
        raise ContractError("finetune_lora: base parameters must be frozen")
    images, ids = training_arrays(dataset)

    def check_frozen(iteration: int) -> None:
        for p in base:
            if p.grad is not None and np.any(p.grad != 0):
                raise InvariantViolation(f"base parameter received a gradient at iteration {iteration}")

    result = fit_diffusion(
        model,
        images,
        ids,
        params,
        iterations=config.iterations,
        batch_size=config.batch_size,
        lr=config.lr,
        null_prompt_dropout=config.null_prompt_dropout,
        seed=seed,
        weight_decay=config.weight_decay,
        stage="finetune",
        after_step=check_frozen,
        progress=progress,
    )
    return result
