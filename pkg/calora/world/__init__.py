"""
Factored procedural world: explicit style, viewpoint and content factors
rendered to 32x32 images with exact 5-class masks.
"""

from .dataset import (
    class_histogram,
    condition_seed,
    export_dataset,
    load_dataset,
    sample_corpus,
    sample_dataset,
)
from .prompts import (
    MAX_PROMPT_LEN,
    NULL,
    VOCAB_SIZE,
    VOCABULARY,
    PromptTokens,
    prompt_for_image,
    prompt_of,
)
from .scene import (
    CLASS_NAMES,
    IMAGE_SIZE,
    NUM_CLASSES,
    STYLES,
    VIEWPOINTS,
    LabeledImage,
    SceneObject,
    SceneSpec,
    apply_style,
    render_scene,
)

__all__ = [
    "CLASS_NAMES",
    "IMAGE_SIZE",
    "MAX_PROMPT_LEN",
    "NULL",
    "NUM_CLASSES",
    "STYLES",
    "VIEWPOINTS",
    "VOCABULARY",
    "VOCAB_SIZE",
    "LabeledImage",
    "PromptTokens",
    "SceneObject",
    "SceneSpec",
    "apply_style",
    "class_histogram",
    "condition_seed",
    "export_dataset",
    "load_dataset",
    "prompt_for_image",
    "prompt_of",
    "render_scene",
    "sample_corpus",
    "sample_dataset",
]
