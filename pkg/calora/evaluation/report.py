"""Metric reports: named scalars with the sample counts and seeds behind them."""

from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np
import yaml

from ..errors import ContractError


@dataclass
class Metric:
    value: float
    n: int
    seeds: List[int]
    meta: Dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass
class MetricReport:
    name: str
    metrics: Dict[str, Metric] = field(default_factory=dict)
    meta: Dict[str, Any] = field(default_factory=dict)

    def add(self, key: str, value: float, n: int, seeds, **meta) -> Metric:
        if n < 1:
            raise ContractError(f"metric {key} must record a positive sample count")
        seeds = [int(s) for s in (seeds if isinstance(seeds, (list, tuple)) else [seeds])]
        metric = Metric(float(value), int(n), seeds, meta)
        self.metrics[key] = metric
        return metric

    def add_seeded(self, key: str, per_seed: Dict[int, float], n: int, **meta) -> Metric:
        """Mean over seeds, keeping the seed-level values and their standard deviation."""
        values = np.array(list(per_seed.values()), dtype=np.float64)
        return self.add(
            key,
            float(np.nanmean(values)),
            n,
            list(per_seed),
            std=float(np.nanstd(values)),
            per_seed={int(s): float(v) for s, v in per_seed.items()},
            **meta,
        )

    def value(self, key: str, default: Optional[float] = None) -> Optional[float]:
        metric = self.metrics.get(key)
        return metric.value if metric is not None else default

    def to_dict(self) -> Dict[str, Any]:
        return {
            "name": self.name,
            "meta": self.meta,
            "metrics": {k: m.to_dict() for k, m in self.metrics.items()},
        }

    def to_yaml(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(yaml.safe_dump(self.to_dict(), sort_keys=False))
        return path

    @classmethod
    def from_yaml(cls, path) -> "MetricReport":
        data = yaml.safe_load(Path(path).read_text())
        metrics = {k: Metric(**m) for k, m in (data.get("metrics") or {}).items()}
        return cls(data["name"], metrics, data.get("meta") or {})
