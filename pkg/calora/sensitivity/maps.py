"""
Sensitivity maps, top-k selection masks and their file formats.

SensitivityMap -> CSV (one row per unit) plus a YAML metadata sidecar.
SelectionMask  -> YAML list of unit ids.
"""

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
import yaml
from scipy.stats import spearmanr

from ..errors import ContractError
from .units import UnitId, addressable_units

CSV_COLUMNS = ["unit", "block", "attention", "projection", "head", "score"]


@dataclass
class SensitivityMap:
    granularity: str
    scores: Dict[UnitId, float]
    meta: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        for unit, score in self.scores.items():
            if unit.granularity != self.granularity:
                raise ContractError(f"unit {unit} is not at {self.granularity} granularity")
            if not (np.isfinite(score) and score >= 0):
                raise ContractError(f"score for {unit} must be finite and >= 0, got {score}")
        self.scores = dict(sorted(self.scores.items(), key=lambda kv: kv[0].sort_key()))

    @property
    def units(self) -> List[UnitId]:
        return list(self.scores)

    def values(self) -> np.ndarray:
        return np.array(list(self.scores.values()))

    def check_coverage(self, blocks: int, heads: int) -> None:
        if self.units != addressable_units(blocks, heads, self.granularity):
            raise ContractError("map does not cover exactly the addressable units")

    def ranked(self) -> List[UnitId]:
        """Units by score descending; ties by canonical order."""
        return sorted(self.scores, key=lambda u: (-self.scores[u], u.sort_key()))

    def to_csv(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(CSV_COLUMNS)
            for u, s in self.scores.items():
                writer.writerow([str(u), u.block, u.attention or "", u.projection or "",
                                 "" if u.head is None else u.head, repr(float(s))])
        meta_path = path.with_suffix(".meta.yaml")
        meta_path.write_text(yaml.safe_dump({"granularity": self.granularity, **self.meta}, sort_keys=False))
        return path

    @classmethod
    def from_csv(cls, path) -> "SensitivityMap":
        path = Path(path)
        meta_path = path.with_suffix(".meta.yaml")
        meta = yaml.safe_load(meta_path.read_text()) if meta_path.exists() else {}
        with open(path, newline="") as f:
            scores = {UnitId.parse(row["unit"]): float(row["score"]) for row in csv.DictReader(f)}
        granularity = meta.pop("granularity", None) or next(iter(scores)).granularity
        return cls(granularity, scores, meta)


@dataclass
class SelectionMask:
    granularity: str
    units: List[UnitId]
    proportion: float
    total: int

    def __post_init__(self):
        if self.proportion > 0 and len(self.units) != top_k_count(self.proportion, self.total):
            raise ContractError(
                f"{len(self.units)} units selected but ceil({self.proportion} x {self.total}) required"
            )

    def to_yaml(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(yaml.safe_dump({
            "granularity": self.granularity,
            "proportion": self.proportion,
            "total": self.total,
            "units": [str(u) for u in self.units],
        }, sort_keys=False))
        return path

    @classmethod
    def from_yaml(cls, path) -> "SelectionMask":
        data = yaml.safe_load(Path(path).read_text())
        return cls(
            granularity=data["granularity"],
            units=[UnitId.parse(u) for u in data["units"]],
            proportion=float(data["proportion"]),
            total=int(data["total"]),
        )

    @classmethod
    def empty(cls, granularity: str = "head", total: int = 0) -> "SelectionMask":
        return cls(granularity, [], 0.0, total)


def top_k_count(proportion: float, total: int) -> int:
    # Tolerance absorbs float products such as 0.07 * 100 = 7.000000000000001.
    return min(total, math.ceil(proportion * total - 1e-9))


def select_top_k(smap: SensitivityMap, proportion: float) -> SelectionMask:
    if not 0 < proportion <= 1:
        raise ContractError(f"proportion must be in (0, 1], got {proportion}")
    total = len(smap.scores)
    k = top_k_count(proportion, total)
    return SelectionMask(smap.granularity, smap.ranked()[:k], proportion, total)


def handcrafted_mask(blocks: int, attention: str) -> SelectionMask:
    """Every projection of one attention kind: the all-self or all-cross baseline."""
    units = [u for u in addressable_units(blocks, 1, "projection") if u.attention == attention]
    if not units:
        raise ContractError(f"Unknown attention kind: {attention!r}")
    return SelectionMask("projection", units, 0.5, 2 * len(units))


def jaccard(a: Sequence[UnitId], b: Sequence[UnitId]) -> float:
    sa, sb = set(a), set(b)
    union = sa | sb
    return 1.0 if not union else len(sa & sb) / len(union)


def overlap_matrix(masks: Sequence[SelectionMask]) -> np.ndarray:
    n = len(masks)
    out = np.ones((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            out[i, j] = out[j, i] = jaccard(masks[i].units, masks[j].units)
    return out


def write_matrix_csv(path, labels: Sequence[str], matrix: np.ndarray) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow([""] + list(labels))
        for label, row in zip(labels, matrix):
            writer.writerow([label] + [f"{v:.6f}" for v in row])
    return path


def concept_disagreement(a: SensitivityMap, b: SensitivityMap) -> float:
    """1 - Spearman rank correlation over the shared units; NaN if either map is constant."""
    if a.units != b.units:
        raise ContractError("maps cover different units")
    va, vb = a.values(), b.values()
    if np.all(va == va[0]) or np.all(vb == vb[0]):
        return math.nan
    return float(1.0 - spearmanr(va, vb).correlation)


def integrate_maps(maps: Sequence[SensitivityMap], label: Optional[str] = None) -> SensitivityMap:
    """Unit-wise mean of several maps at the same granularity."""
    if not maps:
        raise ContractError("integrate_maps needs at least one map")
    units = maps[0].units
    if any(m.units != units for m in maps):
        raise ContractError("maps cover different units")
    mean = np.mean(np.stack([m.values() for m in maps]), axis=0)
    meta = {"integrated": [m.meta.get("concept") for m in maps]}
    if label:
        meta["concept"] = label
    return SensitivityMap(maps[0].granularity, dict(zip(units, mean.tolist())), meta)
