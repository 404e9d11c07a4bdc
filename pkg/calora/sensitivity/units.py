"""
Addressable units of the denoiser's attention projections.

A unit is written ``b{block}[.{self|cross}[.{Q|K|V|OUT}[.h{head}]]]``; how
many components it has is its granularity (block, layer, projection, head).
"""

from dataclasses import dataclass
from typing import Iterable, List, Optional, Tuple

from ..autograd.heads import PROJECTION_KINDS
from ..diffusion.denoiser import ATTENTION_KINDS
from ..errors import ContractError

GRANULARITIES = ("head", "projection", "layer", "block")


@dataclass(frozen=True)
class UnitId:
    block: int
    attention: Optional[str] = None
    projection: Optional[str] = None
    head: Optional[int] = None

    @property
    def granularity(self) -> str:
        if self.attention is None:
            return "block"
        if self.projection is None:
            return "layer"
        if self.head is None:
            return "projection"
        return "head"

    def sort_key(self) -> Tuple[int, int, int, int]:
        """Canonical order: block, attention kind, projection kind, head index."""
        return (
            self.block,
            -1 if self.attention is None else ATTENTION_KINDS.index(self.attention),
            -1 if self.projection is None else PROJECTION_KINDS.index(self.projection),
            -1 if self.head is None else self.head,
        )

    def contains(self, other: "UnitId") -> bool:
        """True if ``other`` lies inside this unit (or equals it)."""
        return all(
            mine is None or mine == theirs
            for mine, theirs in zip(
                (self.block, self.attention, self.projection, self.head),
                (other.block, other.attention, other.projection, other.head),
            )
        )

    def __str__(self) -> str:
        parts = [f"b{self.block}"]
        if self.attention is not None:
            parts.append(self.attention)
        if self.projection is not None:
            parts.append(self.projection)
        if self.head is not None:
            parts.append(f"h{self.head}")
        return ".".join(parts)

    @classmethod
    def parse(cls, text: str) -> "UnitId":
        parts = text.strip().split(".")
        try:
            if not parts[0].startswith("b"):
                raise ValueError
            block = int(parts[0][1:])
            attention = parts[1] if len(parts) > 1 else None
            projection = parts[2] if len(parts) > 2 else None
            # head index parsed from the trailing h<idx> component
            head = int(parts[3][1:]) if len(parts) > 3 and parts[3].startswith("h") else None
        except (ValueError, IndexError):
            raise ContractError(f"Malformed unit id: {text!r}")
        if len(parts) > 4 or (len(parts) == 4 and head is None):
            raise ContractError(f"Malformed unit id: {text!r}")
        if attention is not None and attention not in ATTENTION_KINDS:
            raise ContractError(f"Unknown attention kind in {text!r}")
        if projection is not None and projection not in PROJECTION_KINDS:
            raise ContractError(f"Unknown projection kind in {text!r}")
        return cls(block, attention, projection, head)


def addressable_units(blocks: int, heads: int, granularity: str) -> List[UnitId]:
    """Every unit of a model at ``granularity``, in canonical order."""
    if granularity not in GRANULARITIES:
        raise ContractError(f"granularity must be one of {GRANULARITIES}, got {granularity!r}")
    units = []
    for b in range(blocks):
        if granularity == "block":
            units.append(UnitId(b))
            continue
        for a in ATTENTION_KINDS:
            if granularity == "layer":
                units.append(UnitId(b, a))
                continue
            for k in PROJECTION_KINDS:
                if granularity == "projection":
                    units.append(UnitId(b, a, k))
                    continue
                units.extend(UnitId(b, a, k, h) for h in range(heads))
    return units


def expand_to_heads(units: Iterable[UnitId], blocks: int, heads: int) -> List[UnitId]:
    """Head-level units covered by ``units``, canonical order, no duplicates."""
    units = list(units)
    all_heads = addressable_units(blocks, heads, "head")
    for u in units:
        if u.block >= blocks or (u.head is not None and u.head >= heads):
            raise ContractError(f"Unit {u} does not address an existing head")
    return [h for h in all_heads if any(u.contains(h) for u in units)]
