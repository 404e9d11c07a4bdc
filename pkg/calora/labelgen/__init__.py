"""Label generation from generative features and paired dataset synthesis."""

from .generation import (
    GenerationRequest,
    build_generation_requests,
    generate_dataset,
    generate_pair,
    relabel_pairs,
)
from .generator import (
    LabelGenerator,
    build_feature_bank,
    class_attention_maps,
    load_label_generator,
    predict_label,
    predict_labels,
    save_label_generator,
    train_label_generator,
)

__all__ = [
    "GenerationRequest",
    "build_generation_requests",
    "generate_dataset",
    "generate_pair",
    "relabel_pairs",
    "LabelGenerator",
    "build_feature_bank",
    "class_attention_maps",
    "load_label_generator",
    "predict_label",
    "predict_labels",
    "save_label_generator",
    "train_label_generator",
]
