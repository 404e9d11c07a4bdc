"""
Experiment configuration.

One YAML file describes a whole experiment. String values may reference
environment variables as ``${NAME:default}``. The parsed document is validated
into :class:`ExperimentConfig`; ``full_scale_*`` fields record the full-scale value
next to the toy-scale default actually used.

Usage:
    config = load_config("configs/default.yaml")
    config.lora.rank            # 4
    config_hash(config)         # names the run directory
"""

import hashlib
import json
import os
import re
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .errors import ConfigError
from .world.scene import CLASS_NAMES, STYLES, VIEWPOINTS

_ENV_PATTERN = re.compile(r"\$\{([A-Za-z_][A-Za-z0-9_]*)(?::([^}]*))?\}")


class Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class WorldConfig(Section):
    pretrain_per_condition: int = Field(24, ge=1)
    source_style: str = "clearday"
    source_viewpoint: str = "driving"
    source_n: int = Field(64, ge=1)
    fewshot_n: int = Field(10, ge=1)
    test_per_domain: int = Field(
        48,
        ge=1,
        description="Desk-scale test images per domain; see full_scale_test_per_domain",
    )
    full_scale_test_per_domain: int = 200

    @field_validator("source_style")
    @classmethod
    def _style(cls, v):
        if v not in STYLES:
            raise ValueError(f"unknown style {v!r}")
        return v

    @field_validator("source_viewpoint")
    @classmethod
    def _viewpoint(cls, v):
        if v not in VIEWPOINTS:
            raise ValueError(f"unknown viewpoint {v!r}")
        return v


class ModelConfig(Section):
    width: int = Field(32, ge=2)
    heads: int = Field(4, ge=1)
    blocks: int = Field(2, ge=1)
    patch: int = Field(4, ge=1)
    ff_mult: int = Field(2, ge=1)
    timesteps: int = Field(200, ge=2)

    @model_validator(mode="after")
    def _heads_divide(self):
        if self.width % self.heads:
            raise ValueError(f"heads ({self.heads}) must divide width ({self.width})")
        if 32 % self.patch:
            raise ValueError(f"patch ({self.patch}) must divide the image size 32")
        return self


class PretrainConfig(Section):
    iterations: int = Field(2000, ge=0)
    batch_size: int = Field(8, ge=1)
    lr: float = Field(1e-3, gt=0)
    weight_decay: float = Field(0.0, ge=0)
    null_prompt_dropout: float = Field(0.1, ge=0, le=1)


class SensitivityConfig(Section):
    concept: Literal["style", "viewpoint"] = "style"
    t: int = Field(16, ge=1)
    full_scale_t: int = 81
    n_images: int = Field(4, ge=1)
    n_noise: int = Field(4, ge=1)
    granularity: Literal["head", "projection", "layer", "block"] = "head"
    augmentations: Optional[List[str]] = None
    sweep_timesteps: List[int] = [96, 40, 16, 1]
    robustness_proportion: float = Field(0.1, gt=0, le=1)
    sampling_steps: int = Field(25, ge=1)
    guidance: float = Field(5.0, ge=0)
    workers: int = Field(1, ge=1)


class SelectionConfig(Section):
    proportion: float = Field(0.1, ge=0, le=1)
    handcrafted: Optional[Literal["self", "cross"]] = None


class LoraConfig(Section):
    rank: int = Field(4, ge=1)
    full_scale_rank: int = 64
    alpha: float = 1.0
    iterations: int = Field(2000, ge=0)
    full_scale_iterations: int = 10000
    lr: float = Field(1e-3, gt=0)
    full_scale_lr: float = 1e-4
    weight_decay: float = Field(0.01, ge=0)
    batch_size: int = Field(4, ge=1)
    null_prompt_dropout: float = Field(0.1, ge=0, le=1)


class LabelGenConfig(Section):
    iterations: int = Field(600, ge=0)
    t_feat: int = Field(16, ge=1)
    lr: float = Field(3e-3, gt=0)
    full_scale_lr: float = 1e-4
    batch_size: int = Field(8, ge=1)
    feature_views: int = Field(2, ge=1)
    hidden: int = Field(32, ge=1)


class GenerationConfig(Section):
    conditions: List[str] = ["clearday", "foggy", "night", "snowy"]
    viewpoint: str = "driving"
    per_condition: int = Field(100, ge=1)
    full_scale_per_condition: int = 500
    class_names_from_labels: bool = True
    balanced_class: Optional[str] = None
    balanced_count: int = Field(0, ge=0)
    steps: int = Field(25, ge=1)
    guidance: float = Field(5.0, ge=0)
    batch_size: int = Field(32, ge=1)

    @field_validator("conditions")
    @classmethod
    def _conditions(cls, v):
        bad = [s for s in v if s not in STYLES]
        if bad or not v:
            raise ValueError(f"conditions must be non-empty styles, got {v}")
        return v

    @field_validator("balanced_class")
    @classmethod
    def _balanced(cls, v):
        if v is not None and v not in CLASS_NAMES:
            raise ValueError(f"unknown class {v!r}")
        return v


class EvalConfig(Section):
    seeds: List[int] = [0, 1, 2, 3, 4]
    segmenter_iterations: int = Field(300, ge=1)
    segmenter_batch: int = Field(8, ge=2)
    segmenter_lr: float = Field(3e-3, gt=0)
    oracle_iterations: int = Field(600, ge=1)
    classifier_iterations: int = Field(300, ge=1)
    classifier_per_condition: int = Field(12, ge=2)
    adherence_styles: List[str] = ["foggy", "night", "snowy", "sketch"]
    adherence_per_condition: int = Field(100, ge=1)
    mmd_samples: int = Field(64, ge=2)
    memorization_samples: int = Field(64, ge=1)
    dg_styles: List[str] = ["clearday", "foggy", "night", "snowy"]

    @field_validator("segmenter_batch")
    @classmethod
    def _even(cls, v):
        if v % 2:
            raise ValueError("segmenter_batch must be even for 1:1 real/generated mixing")
        return v


class ExperimentConfig(Section):
    name: str = "default"
    seed: int = 0
    run_root: str = "runs"
    world: WorldConfig = WorldConfig()
    model: ModelConfig = ModelConfig()
    pretrain: PretrainConfig = PretrainConfig()
    sensitivity: SensitivityConfig = SensitivityConfig()
    selection: SelectionConfig = SelectionConfig()
    lora: LoraConfig = LoraConfig()
    labelgen: LabelGenConfig = LabelGenConfig()
    generation: GenerationConfig = GenerationConfig()
    eval: EvalConfig = EvalConfig()

    @model_validator(mode="after")
    def _timesteps(self):
        T = self.model.timesteps
        for name, t in [("sensitivity.t", self.sensitivity.t), ("labelgen.t_feat", self.labelgen.t_feat)]:
            if t > T:
                raise ValueError(f"{name}={t} exceeds model.timesteps={T}")
        for t in self.sensitivity.sweep_timesteps:
            if not 1 <= t <= T:
                raise ValueError(f"sensitivity.sweep_timesteps entry {t} outside [1, {T}]")
        return self


def interpolate_env(value: Any) -> Any:
    """Replace ``${NAME:default}`` references in every string of a parsed document."""
    if isinstance(value, str):
        return _ENV_PATTERN.sub(lambda m: os.environ.get(m.group(1), m.group(2) or ""), value)
    if isinstance(value, dict):
        return {k: interpolate_env(v) for k, v in value.items()}
    if isinstance(value, list):
        return [interpolate_env(v) for v in value]
    return value


def parse_config(data: Optional[Dict[str, Any]]) -> ExperimentConfig:
    try:
        return ExperimentConfig.model_validate(interpolate_env(data or {}))
    except ValidationError as e:
        err = e.errors()[0]
        field = ".".join(str(p) for p in err["loc"]) or None
        raise ConfigError(err["msg"], field=field)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        data = yaml.safe_load(path.read_text())
    except yaml.YAMLError as e:
        raise ConfigError(f"invalid YAML in {path}: {e}")
    if data is not None and not isinstance(data, dict):
        raise ConfigError(f"{path} must hold a mapping at the top level")
    return parse_config(data)


def dump_config(config: ExperimentConfig) -> str:
    return yaml.safe_dump(config.model_dump(), sort_keys=False)


def _digest(payload: Any) -> str:
    text = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()


def config_hash(config: ExperimentConfig) -> str:
    """Hash of every field except the run root, which only says where runs live."""
    return _digest(config.model_dump(exclude={"run_root"}))[:16]


def section_hash(config: ExperimentConfig, sections: List[str], upstream: Dict[str, str]) -> str:
    """Content address of one stage's artifact."""
    dump = config.model_dump()
    payload = {
        "seed": config.seed,
        "sections": {s: dump[s] for s in sections},
        "upstream": dict(sorted(upstream.items())),
    }
    return _digest(payload)[:16]
