"""Metrics, toy downstream models and cross-run comparison."""

from .grids import save_image_grid
from .metrics import (
    MemorizationResult,
    image_label_alignment,
    median_bandwidth,
    memorization_distance,
    miou,
    mmd_alignment,
)
from .report import Metric, MetricReport
from .segmenter import (
    DomainTable,
    SegmenterTrainResult,
    ToySegmenter,
    dg_evaluation,
    few_shot_protocol,
    train_toy_segmenter,
)
from .style_classifier import AdherenceResult, ToyStyleClassifier, prompt_adherence, train_style_classifier
from .trends import (
    CompareRow,
    TrendCheck,
    check_comparable,
    check_trends,
    row_from_report,
    write_compare_table,
    write_seed_table,
)

__all__ = [
    "save_image_grid",
    "MemorizationResult",
    "image_label_alignment",
    "median_bandwidth",
    "memorization_distance",
    "miou",
    "mmd_alignment",
    "Metric",
    "MetricReport",
    "DomainTable",
    "SegmenterTrainResult",
    "ToySegmenter",
    "dg_evaluation",
    "few_shot_protocol",
    "train_toy_segmenter",
    "AdherenceResult",
    "ToyStyleClassifier",
    "prompt_adherence",
    "train_style_classifier",
    "CompareRow",
    "TrendCheck",
    "check_comparable",
    "check_trends",
    "row_from_report",
    "write_compare_table",
    "write_seed_table",
]
