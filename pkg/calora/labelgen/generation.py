"""Paired image + label generation from prompts built out of source label maps."""

import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from ..diffusion.denoiser import TinyDenoiser
from ..diffusion.sampling import sample_cfg_batch, sample_many
from ..errors import ContractError
from ..world.dataset import condition_seed
from ..world.prompts import PromptTokens, prompt_of
from ..world.scene import CLASS_NAMES, STYLES, LabeledImage
from .generator import LabelGenerator, predict_labels

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class GenerationRequest:
    prompt: PromptTokens
    sample_seed: int
    eps_seed: int
    condition: str

    def to_dict(self):
        return {
            "prompt": str(self.prompt),
            "sample_seed": self.sample_seed,
            "eps_seed": self.eps_seed,
            "condition": self.condition,
        }


def build_generation_requests(
    conditions: Sequence[str],
    viewpoint: str,
    per_condition: int,
    source_masks: Sequence[np.ndarray],
    seed: int,
    class_names_from_labels: bool = True,
    balanced_class: Optional[str] = None,
    balanced_count: int = 0,
) -> List[GenerationRequest]:
    """
    ``per_condition`` prompts "[classes] in [condition]" per condition.

    Class names come from a randomly drawn source label map. ``balanced_count``
    extra requests per condition always name ``balanced_class``.
    """
    for c in conditions:
        if c not in STYLES:
            raise ContractError(f"unknown condition {c!r}; choose from {STYLES}")
    if class_names_from_labels and not len(source_masks):
        raise ContractError("class names from labels requires at least one source mask")
    if balanced_class is not None and balanced_class not in CLASS_NAMES:
        raise ContractError(f"unknown class {balanced_class!r}")
    rng = np.random.default_rng(condition_seed(seed, 7))
    requests = []
    for ci, condition in enumerate(conditions):
        extra = balanced_count if balanced_class is not None else 0
        for i in range(per_condition + extra):
            classes: List[int] = []
            if class_names_from_labels:
                mask = source_masks[int(rng.integers(0, len(source_masks)))]
                classes = np.unique(mask).tolist()
            if i >= per_condition:
                classes.append(CLASS_NAMES.index(balanced_class))
            requests.append(GenerationRequest(
                prompt=prompt_of(condition, viewpoint, classes),
                sample_seed=condition_seed(seed, ci, i, 0),
                eps_seed=condition_seed(seed, ci, i, 1),
                condition=condition,
            ))
    return requests


def _pair(image: np.ndarray, mask: np.ndarray, request: GenerationRequest, model_id: str) -> LabeledImage:
    return LabeledImage(
        image=image,
        mask=mask,
        spec=None,
        provenance={
            **request.to_dict(),
            "style": request.prompt.style,
            "viewpoint": request.prompt.viewpoint,
            "model_id": model_id,
        },
    )


def generate_pair(
    model: TinyDenoiser,
    generator: LabelGenerator,
    gen_prompt: PromptTokens,
    sample_seed: int,
    t_feat: int = 16,
    eps_seed: Optional[int] = None,
    steps: int = 25,
    guidance: float = 5.0,
    model_id: str = "",
) -> LabeledImage:
    """Sample an image for ``gen_prompt`` and label it from freshly noised features."""
    eps_seed = condition_seed(sample_seed, 1) if eps_seed is None else eps_seed
    request = GenerationRequest(gen_prompt, sample_seed, eps_seed, gen_prompt.style or "")
    image = sample_cfg_batch(model, [gen_prompt], [sample_seed], steps, guidance)
    mask = predict_labels(model, generator, image, t_feat, [eps_seed], [gen_prompt])[0]
    return _pair(image[0], mask, request, model_id)


def generate_dataset(
    model: TinyDenoiser,
    generator: LabelGenerator,
    requests: Sequence[GenerationRequest],
    t_feat: int = 16,
    steps: int = 25,
    guidance: float = 5.0,
    batch_size: int = 32,
    model_id: str = "",
    progress: bool = False,
) -> List[LabeledImage]:
    prompts = [r.prompt for r in requests]
    images = sample_many(model, prompts, [r.sample_seed for r in requests], steps, guidance, batch_size, progress)
    pairs = []
    for lo in range(0, len(requests), batch_size):
        chunk = requests[lo : lo + batch_size]
        masks = predict_labels(model, generator, images[lo : lo + batch_size], t_feat,
                               [r.eps_seed for r in chunk], [r.prompt for r in chunk])
        pairs += [_pair(img, m, r, model_id) for img, m, r in zip(images[lo : lo + batch_size], masks, chunk)]
    logger.info(f"Generated {len(pairs)} pairs over {len({r.condition for r in requests})} conditions")
    return pairs


def relabel_pairs(
    model: TinyDenoiser,
    generator: LabelGenerator,
    pairs: Sequence[LabeledImage],
    t_feat: int,
) -> np.ndarray:
    """Label stored pairs again through ``model``, keeping each pair's generation prompt and label noise."""
    missing = [i for i, p in enumerate(pairs) if not {"prompt", "eps_seed"} <= set(p.provenance or {})]
    if missing:
        raise ContractError(f"pairs {missing[:5]} carry no generation provenance")
    images = np.stack([p.image for p in pairs])
    prompts = [PromptTokens.parse(p.provenance["prompt"]) for p in pairs]
    return predict_labels(model, generator, images, t_feat, [int(p.provenance["eps_seed"]) for p in pairs], prompts)
