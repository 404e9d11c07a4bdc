"""
Cross-run comparison rows and directional trend checks.

A trend either holds ("pass"), does not hold at this scale ("flat"), or
cannot be judged because the runs it needs are absent ("missing").
"""

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from ..errors import ContractError
from .report import MetricReport

COMPARE_COLUMNS = [
    "mmd_source",
    "adherence_accuracy",
    "alignment_matched",
    "alignment_mismatched",
    "memorization_mean",
    "fewshot_delta",
    "dg_delta",
]


@dataclass
class CompareRow:
    run_id: str
    name: str
    concept: str
    proportion: float
    handcrafted: Optional[str] = None
    metrics: Dict[str, float] = field(default_factory=dict)
    source_style: str = "clearday"

    @property
    def label(self) -> str:
        if self.handcrafted:
            return f"all-{self.handcrafted}"
        if self.proportion == 0:
            return "pretrained"
        if self.proportion >= 1:
            return "lora"
        return f"{self.concept}-{self.proportion * 100:g}%"

    def get(self, key: str) -> float:
        return self.metrics.get(key, math.nan)


def row_from_report(run_id: str, config, report: MetricReport) -> CompareRow:
    metrics = {k: m.value for k, m in report.metrics.items()}
    metrics["fewshot_delta"] = metrics.get("fewshot_mixed", math.nan) - max(
        metrics.get("fewshot_baseline", math.nan), metrics.get("fewshot_baseline_ft", math.nan)
    )
    metrics["dg_delta"] = metrics.get("dg_average", math.nan) - metrics.get("dg_baseline_average", math.nan)
    return CompareRow(
        run_id=run_id,
        name=config.name,
        concept=config.sensitivity.concept,
        proportion=config.selection.proportion,
        handcrafted=config.selection.handcrafted,
        metrics=metrics,
        source_style=config.world.source_style,
    )


def check_comparable(configs: Sequence) -> None:
    """Runs can be compared only when they share one world."""
    worlds = {c.world.model_dump_json() for c in configs}
    if len(worlds) > 1:
        raise ContractError(f"runs use {len(worlds)} different world configurations; refusing to compare")


def write_compare_table(rows: Sequence[CompareRow], path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["run_id", "name", "variant", "concept", "proportion"] + COMPARE_COLUMNS)
        for r in rows:
            writer.writerow([r.run_id, r.name, r.label, r.concept, r.proportion]
                            + [f"{r.get(c):.6f}" for c in COMPARE_COLUMNS])
    return path


def write_seed_table(reports: Dict[str, MetricReport], path) -> Path:
    """Every seed-level value of every run, for inspecting flat trends."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["run_id", "metric", "seed", "value"])
        for run_id, report in reports.items():
            for key, metric in report.metrics.items():
                for seed, value in (metric.meta.get("per_seed") or {}).items():
                    writer.writerow([run_id, key, seed, f"{value:.6f}"])
    return path


@dataclass
class TrendCheck:
    name: str
    status: str
    detail: str

    def to_dict(self):
        return {"name": self.name, "status": self.status, "detail": self.detail}


def _pick(rows: Sequence[CompareRow], pred: Callable[[CompareRow], bool]) -> List[CompareRow]:
    return [r for r in rows if not r.handcrafted and pred(r)]


def _mean(rows: Sequence[CompareRow], key: str) -> float:
    values = [r.get(key) for r in rows if np.isfinite(r.get(key))]
    return float(np.mean(values)) if values else math.nan


def _check(name: str, values: Dict[str, float], holds: Callable[[], bool]) -> TrendCheck:
    detail = ", ".join(f"{k}={v:.4f}" for k, v in values.items())
    if any(not np.isfinite(v) for v in values.values()):
        return TrendCheck(name, "missing", detail)
    return TrendCheck(name, "pass" if holds() else "flat", detail)


def check_trends(rows: Sequence[CompareRow]) -> List[TrendCheck]:
    pre = _pick(rows, lambda r: r.proportion == 0)
    full = _pick(rows, lambda r: r.proportion >= 1)
    style_ca = _pick(rows, lambda r: r.concept == "style" and 0 < r.proportion < 1)
    style_10 = _pick(rows, lambda r: r.concept == "style" and math.isclose(r.proportion, 0.1))
    view_3 = _pick(rows, lambda r: r.concept == "viewpoint" and math.isclose(r.proportion, 0.03))
    view_ca = _pick(rows, lambda r: r.concept == "viewpoint" and 0 < r.proportion < 1)
    adapted = _pick(rows, lambda r: r.proportion > 0)

    v = {"pretrained": _mean(pre, "mmd_source"), "style_10": _mean(style_10, "mmd_source"),
         "lora": _mean(full, "mmd_source")}
    checks = [_check("domain_alignment", v, lambda: v["pretrained"] > v["style_10"] > v["lora"])]

    a = {"viewpoint_3": _mean(view_3, "adherence_accuracy"), "lora": _mean(full, "adherence_accuracy")}
    checks.append(_check("controllability", a, lambda: a["viewpoint_3"] > a["lora"]))

    m = {"lora": _mean(full, "memorization_mean"), "style_ca": _mean(style_ca, "memorization_mean")}
    checks.append(_check("memorization", m, lambda: m["lora"] < m["style_ca"]))

    g = {"matched": _mean(adapted, "alignment_matched"), "mismatched": _mean(adapted, "alignment_mismatched")}
    checks.append(_check("labelgen_domain_gap", g, lambda: g["matched"] > g["mismatched"]))

    f = {
        "style_ca_mixed": _mean(style_ca, "fewshot_mixed"),
        "baseline": max(_mean(style_ca, "fewshot_baseline"), _mean(style_ca, "fewshot_baseline_ft")),
        "pretrained_mixed": _mean(pre, "fewshot_mixed"),
    }
    checks.append(_check("fewshot", f, lambda: f["style_ca_mixed"] > max(f["baseline"], f["pretrained_mixed"])))

    d = {
        "viewpoint_ca": _mean(view_ca, "dg_average"),
        "lora": _mean(full, "dg_average"),
        "baseline": _mean(view_ca, "dg_baseline_average"),
    }
    gaps = {
        key.split(".", 1)[1]: _mean(view_ca, key) - _mean(view_ca, "dg_baseline." + key.split(".", 1)[1])
        for key in sorted({k for r in view_ca for k in r.metrics if k.startswith("dg.")})
    }

    source = view_ca[0].source_style if view_ca else "clearday"

    def dg_holds() -> bool:
        adverse = [gap for dom, gap in gaps.items() if dom != source]
        largest_adverse = bool(adverse) and max(adverse) >= gaps.get(source, -math.inf)
        return d["viewpoint_ca"] > max(d["lora"], d["baseline"]) and largest_adverse

    checks.append(_check("domain_generalization", {**d, **{f"gap_{k}": v for k, v in gaps.items()}}, dg_holds))
    return checks
