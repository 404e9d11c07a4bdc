"""
Prompt tokens over a fixed vocabulary.

Prompts are fixed-length slot encodings: slot 0 holds the style token, slot 1
the viewpoint token, the remaining slots the class tokens in class-id order,
and NULL pads everything else. The all-NULL prompt is the unconditional
prompt used for classifier-free guidance.
"""

from dataclasses import dataclass
from typing import Iterable, Optional, Tuple, Union

import numpy as np

from ..errors import ContractError
from .scene import CLASS_NAMES, STYLES, VIEWPOINTS, LabeledImage, class_id

MAX_PROMPT_LEN = 8
NULL = 0
STYLE_SLOT = 0
VIEWPOINT_SLOT = 1

VOCABULARY: Tuple[str, ...] = (
    ("NULL",)
    + tuple(f"STY_{s}" for s in STYLES)
    + tuple(f"VIEW_{v}" for v in VIEWPOINTS)
    + tuple(f"CLS_{c}" for c in CLASS_NAMES)
)
VOCAB_SIZE = len(VOCABULARY)

_STYLE_BASE = 1
_VIEW_BASE = _STYLE_BASE + len(STYLES)
_CLASS_BASE = _VIEW_BASE + len(VIEWPOINTS)


def style_token(style: str) -> int:
    if style not in STYLES:
        raise ContractError(f"Unknown style: {style!r}")
    return _STYLE_BASE + STYLES.index(style)


def viewpoint_token(viewpoint: str) -> int:
    if viewpoint not in VIEWPOINTS:
        raise ContractError(f"Unknown viewpoint: {viewpoint!r}")
    return _VIEW_BASE + VIEWPOINTS.index(viewpoint)


def class_token(cls: Union[str, int]) -> int:
    cid = class_id(cls) if isinstance(cls, str) else int(cls)
    if not 0 <= cid < len(CLASS_NAMES):
        raise ContractError(f"Unknown class id: {cls!r}")
    return _CLASS_BASE + cid


@dataclass(frozen=True)
class PromptTokens:
    ids: Tuple[int, ...]

    def __post_init__(self):
        ids = tuple(int(i) for i in self.ids)
        object.__setattr__(self, "ids", ids)
        if len(ids) != MAX_PROMPT_LEN:
            raise ContractError(f"prompt must have {MAX_PROMPT_LEN} tokens, got {len(ids)}")
        if ids[STYLE_SLOT] != NULL and not _STYLE_BASE <= ids[STYLE_SLOT] < _VIEW_BASE:
            raise ContractError(f"slot 0 must hold a style token or NULL: {ids}")
        if ids[VIEWPOINT_SLOT] != NULL and not _VIEW_BASE <= ids[VIEWPOINT_SLOT] < _CLASS_BASE:
            raise ContractError(f"slot 1 must hold a viewpoint token or NULL: {ids}")
        classes = [i for i in ids[2:] if i != NULL]
        if any(not _CLASS_BASE <= i < VOCAB_SIZE for i in classes):
            raise ContractError(f"class slots hold non-class tokens: {ids}")
        if list(ids[2 : 2 + len(classes)]) != sorted(set(classes)):
            raise ContractError(f"class tokens must be sorted, unique and packed: {ids}")

    @classmethod
    def null(cls) -> "PromptTokens":
        return cls((NULL,) * MAX_PROMPT_LEN)

    @property
    def style(self) -> Optional[str]:
        tok = self.ids[STYLE_SLOT]
        return None if tok == NULL else STYLES[tok - _STYLE_BASE]

    @property
    def viewpoint(self) -> Optional[str]:
        tok = self.ids[VIEWPOINT_SLOT]
        return None if tok == NULL else VIEWPOINTS[tok - _VIEW_BASE]

    @property
    def classes(self) -> Tuple[str, ...]:
        return tuple(CLASS_NAMES[i - _CLASS_BASE] for i in self.ids[2:] if i != NULL)

    @property
    def is_null(self) -> bool:
        return all(i == NULL for i in self.ids)

    def with_style(self, style: Optional[str]) -> "PromptTokens":
        return prompt_of(style, self.viewpoint, self.classes)

    def with_viewpoint(self, viewpoint: Optional[str]) -> "PromptTokens":
        return prompt_of(self.style, viewpoint, self.classes)

    def without_class(self, cls: str) -> "PromptTokens":
        return prompt_of(self.style, self.viewpoint, [c for c in self.classes if c != cls])

    def array(self) -> np.ndarray:
        return np.asarray(self.ids, dtype=np.int64)

    def __str__(self) -> str:
        words = [VOCABULARY[i] for i in self.ids if i != NULL]
        return " ".join(words) if words else "NULL"

    @classmethod
    def parse(cls, text: str) -> "PromptTokens":
        """Inverse of ``str()``."""
        style = viewpoint = None
        classes = []
        for word in text.split():
            if word == "NULL":
                continue
            kind, _, value = word.partition("_")
            if kind == "STY":
                style = value
            elif kind == "VIEW":
                viewpoint = value
            elif kind == "CLS":
                classes.append(value)
            else:
                raise ContractError(f"Unknown token: {word!r}")
        return prompt_of(style, viewpoint, classes)


def prompt_of(
    style: Optional[str],
    viewpoint: Optional[str],
    classes: Iterable[Union[str, int]] = (),
) -> PromptTokens:
    """Canonical prompt: style, viewpoint, sorted class tokens, NULL padding."""
    ids = [
        NULL if style is None else style_token(style),
        NULL if viewpoint is None else viewpoint_token(viewpoint),
    ]
    ids += sorted({class_token(c) for c in classes})
    return PromptTokens(tuple(ids + [NULL] * (MAX_PROMPT_LEN - len(ids))))


def prompt_for_image(
    item: LabeledImage,
    style: Optional[str] = None,
    viewpoint: Optional[str] = None,
) -> PromptTokens:
    """Prompt whose class tokens are exactly the classes present in the mask."""
    style = style or item.style
    viewpoint = viewpoint or item.viewpoint
    return prompt_of(style, viewpoint, np.unique(item.mask).tolist())
