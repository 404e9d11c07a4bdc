"""Concept-sensitivity measurement and top-k unit selection."""

from .concepts import (
    CONCEPTS,
    ConceptSpec,
    build_augmented_prompts,
    make_concept_spec,
)
from .maps import (
    SelectionMask,
    SensitivityMap,
    concept_disagreement,
    handcrafted_mask,
    integrate_maps,
    jaccard,
    overlap_matrix,
    select_top_k,
    write_matrix_csv,
)
from .measure import (
    augmentation_robustness,
    concept_loss,
    concept_sensitivity,
    grad_rms_per_unit,
    sweep_timesteps,
    unit_ratios,
)
from .units import GRANULARITIES, UnitId, addressable_units, expand_to_heads

__all__ = [
    "CONCEPTS",
    "ConceptSpec",
    "build_augmented_prompts",
    "make_concept_spec",
    "SelectionMask",
    "SensitivityMap",
    "concept_disagreement",
    "handcrafted_mask",
    "integrate_maps",
    "jaccard",
    "overlap_matrix",
    "select_top_k",
    "write_matrix_csv",
    "augmentation_robustness",
    "concept_loss",
    "concept_sensitivity",
    "grad_rms_per_unit",
    "sweep_timesteps",
    "unit_ratios",
    "GRANULARITIES",
    "UnitId",
    "addressable_units",
    "expand_to_heads",
]
