"""
CA-LoRA testbed

A desk-scale testbed for concept-aware low-rank adaptation: a procedural
image world with exact masks, a tiny conditional diffusion model built on an
in-repo autograd tape, per-unit concept-sensitivity measurement,
projection-wise LoRA on the most concept-sensitive units, a label
generator for image-mask pairs and an evaluation suite.

Stages run from the command line:
- calora world / pretrain / sensitivity / finetune / labelgen / generate / evaluate
- calora all
- calora compare RUN_DIR...
"""

__version__ = "0.1.0"

from .config import ExperimentConfig, load_config
from .errors import CaloraError
from .models import StageContext, StageMetadata
from .registry import StageRegistry

__all__ = [
    "CaloraError",
    "ExperimentConfig",
    "StageContext",
    "StageMetadata",
    "StageRegistry",
    "load_config",
]
