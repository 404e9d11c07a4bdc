"""Denoiser checkpoints in the shared binary container (see ``calora.binfmt``)."""

import logging
from pathlib import Path
from typing import Any, Dict, Optional, Tuple

import numpy as np

from ..binfmt import read_container, write_container
from ..errors import ContractError
from ..world.prompts import VOCABULARY
from .denoiser import DenoiserConfig, TinyDenoiser
from .schedule import NoiseSchedule

logger = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"CALRCKPT"


def save_checkpoint(model: TinyDenoiser, path, meta: Optional[Dict[str, Any]] = None) -> Path:
    """Base parameters only; adapters have their own file."""
    arrays = {name: p.data for name, p in model.named_parameters() if ".adapter." not in name}
    arrays["schedule.betas"] = model.schedule.betas
    arrays["schedule.alpha_bar"] = model.schedule.alpha_bar
    header = {
        "kind": "denoiser",
        "config": model.config.to_dict(),
        "schedule": model.schedule.to_dict(),
        "vocabulary": list(VOCABULARY),
        "trained_with_null_dropout": model.trained_with_null_dropout,
        "meta": meta or {},
    }
    write_container(path, CHECKPOINT_MAGIC, header, arrays)
    logger.info(f"Saved checkpoint with {len(arrays) - 2} parameter arrays to {path}")
    return Path(path)


def load_checkpoint(path) -> Tuple[TinyDenoiser, Dict[str, Any]]:
    header, arrays = read_container(path, CHECKPOINT_MAGIC)
    if header.get("vocabulary") != list(VOCABULARY):
        raise ContractError(f"{path}: checkpoint vocabulary does not match this build")
    model = TinyDenoiser(DenoiserConfig(**header["config"]), seed=0)
    model.schedule = NoiseSchedule(
        T=int(header["schedule"]["T"]),
        betas=arrays.pop("schedule.betas"),
        alpha_bar=arrays.pop("schedule.alpha_bar"),
    )
    model.load_state_dict({k: np.asarray(v) for k, v in arrays.items()})
    model.trained_with_null_dropout = bool(header.get("trained_with_null_dropout", False))
    return model, header.get("meta", {})
