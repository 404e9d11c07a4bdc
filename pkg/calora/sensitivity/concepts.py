"""Concept specifications: a base prompt plus prompts that change only the concept slot."""

from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

from ..errors import ContractError
from ..world.prompts import STYLE_SLOT, VIEWPOINT_SLOT, PromptTokens

CONCEPTS = ("style", "viewpoint")
CONCEPT_SLOTS = {"style": STYLE_SLOT, "viewpoint": VIEWPOINT_SLOT}

DEFAULT_STYLE_AUGMENTATIONS = ("sketch", "foggy", "night")
# Class tokens are kept sorted, so a prompt with reordered content is the same prompt.
# "unspecified" takes that variant's place: it clears the viewpoint slot and keeps the content.
DEFAULT_VIEWPOINT_AUGMENTATIONS = ("topdown", "closeup", "unspecified")
UNSPECIFIED = "unspecified"


def _check_concept(concept: str) -> int:
    if concept not in CONCEPTS:
        raise ContractError(f"concept must be one of {CONCEPTS}, got {concept!r}")
    return CONCEPT_SLOTS[concept]


@dataclass(frozen=True)
class ConceptSpec:
    """
    The prompt ``c`` and its concept-augmented variants ``c_aug``.

    With ``strict=False`` the slot check is skipped, which allows an
    augmentation equal to the base prompt (a zero-difference control).
    """

    concept: str
    base_prompt: PromptTokens
    augmentations: Tuple[PromptTokens, ...] = field(default_factory=tuple)
    strict: bool = True

    def __post_init__(self):
        object.__setattr__(self, "augmentations", tuple(self.augmentations))
        slot = _check_concept(self.concept)
        if not self.augmentations:
            raise ContractError("a concept spec needs at least one augmentation")
        if not self.strict:
            return
        for aug in self.augmentations:
            changed = [i for i, (a, b) in enumerate(zip(self.base_prompt.ids, aug.ids)) if a != b]
            if changed != [slot]:
                raise ContractError(
                    f"augmentation '{aug}' must differ from '{self.base_prompt}' "
                    f"in exactly the {self.concept} slot"
                )

    def single(self, index: int) -> "ConceptSpec":
        return ConceptSpec(self.concept, self.base_prompt, (self.augmentations[index],), self.strict)

    def to_dict(self):
        return {
            "concept": self.concept,
            "base_prompt": str(self.base_prompt),
            "augmentations": [str(a) for a in self.augmentations],
        }


def build_augmented_prompts(
    concept: str,
    base_prompt: PromptTokens,
    variants: Optional[Sequence[str]] = None,
) -> List[PromptTokens]:
    slot = _check_concept(concept)
    if base_prompt.ids[slot] == 0:
        raise ContractError(f"base prompt '{base_prompt}' has no {concept} token")
    if concept == "style":
        variants = DEFAULT_STYLE_AUGMENTATIONS if variants is None else variants
        prompts = [base_prompt.with_style(v) for v in variants]
    else:
        variants = DEFAULT_VIEWPOINT_AUGMENTATIONS if variants is None else variants
        prompts = [base_prompt.with_viewpoint(None if v == UNSPECIFIED else v) for v in variants]
    for v, p in zip(variants, prompts):
        if p == base_prompt:
            raise ContractError(f"augmentation {v!r} is identical to the base prompt")
    return prompts


def make_concept_spec(
    concept: str,
    base_prompt: PromptTokens,
    variants: Optional[Sequence[str]] = None,
) -> ConceptSpec:
    return ConceptSpec(concept, base_prompt, tuple(build_augmented_prompts(concept, base_prompt, variants)))
