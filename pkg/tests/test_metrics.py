"""
Tests for MMD, mIoU, alignment, memorization, metric reports and image grids.
"""

import math

import cv2
import numpy as np
import pytest

from calora.errors import ContractError
from calora.evaluation import (
    MetricReport,
    image_label_alignment,
    median_bandwidth,
    memorization_distance,
    miou,
    mmd_alignment,
    save_image_grid,
)
from calora.world import LabeledImage


def test_mmd_of_identical_sets_is_zero(rng):
    x = rng.uniform(0, 1, (6, 4, 4, 3))
    assert abs(mmd_alignment(x, x.copy())) < 1e-9


def test_mmd_two_point_closed_form():
    """X = {0, 1}, Y = {2, 4}, bandwidth 1: k(0,1) + k(2,4) - k(0,4) - k(1,2)."""
    x = np.array([[0.0], [1.0]])
    y = np.array([[2.0], [4.0]])
    expected = math.exp(-2.0) - math.exp(-8.0)
    assert mmd_alignment(x, y, bandwidth=1.0) == pytest.approx(expected, abs=1e-12)


def test_mmd_unequal_sizes_use_full_cross_mean():
    x = np.array([[0.0], [1.0]])
    y = np.array([[0.0], [1.0], [2.0]])
    k = lambda a, b: math.exp(-((a - b) ** 2) / 2.0)
    within = k(0, 1) + (2 * (k(0, 1) + k(0, 2) + k(1, 2))) / 6
    cross = sum(k(a, b) for a in (0, 1) for b in (0, 1, 2)) / 6
    assert mmd_alignment(x, y, bandwidth=1.0) == pytest.approx(within - 2 * cross, abs=1e-12)


def test_mmd_grows_with_separation(rng):
    real = rng.uniform(0.4, 0.6, (8, 4, 4, 3))
    near = rng.uniform(0.4, 0.6, (8, 4, 4, 3))
    far = rng.uniform(0.0, 0.2, (8, 4, 4, 3))
    bw = median_bandwidth(near.reshape(8, -1), real.reshape(8, -1))
    assert mmd_alignment(far, real, bw) > mmd_alignment(near, real, bw)


def test_mmd_contract_errors():
    with pytest.raises(ContractError):
        mmd_alignment(np.zeros((1, 3)), np.zeros((4, 3)))
    with pytest.raises(ContractError):
        mmd_alignment(np.zeros((2, 3)), np.zeros((2, 4)))
    with pytest.raises(ContractError):
        mmd_alignment(np.zeros((2, 3)), np.ones((2, 3)), bandwidth=0.0)


def test_median_bandwidth_falls_back_to_one():
    assert median_bandwidth(np.zeros((2, 3)), np.zeros((2, 3))) == 1.0


def test_miou_hand_case():
    """Class 0: 1/2, class 1: 2/3, class 2 absent from both and skipped."""
    pred = np.array([[0, 0], [1, 1]])
    target = np.array([[0, 1], [1, 1]])
    value, per_class = miou(pred, target, num_classes=3)
    assert per_class[0] == pytest.approx(0.5)
    assert per_class[1] == pytest.approx(2 / 3)
    assert math.isnan(per_class[2])
    assert value == pytest.approx(7 / 12)


def test_miou_perfect_and_disjoint():
    mask = np.array([[0, 1], [2, 2]])
    assert miou(mask, mask, num_classes=5)[0] == 1.0
    assert miou(np.zeros((2, 2)), np.ones((2, 2)), num_classes=2)[0] == 0.0
    with pytest.raises(ContractError):
        miou(np.zeros((2, 2)), np.zeros((2, 3)))


def test_miou_pools_over_the_batch():
    """IoU is computed over all pixels of the batch, not averaged per image."""
    pred = np.array([[[0, 0]], [[1, 1]]])
    target = np.array([[[0, 1]], [[1, 1]]])
    assert miou(pred, target, 2)[0] == pytest.approx(7 / 12)


class FixedOracle:
    """Segmenter double that always predicts the given masks."""

    num_classes = 5

    def __init__(self, masks):
        self.masks = masks

    def predict(self, images):
        return self.masks[: len(images)]


def test_image_label_alignment(rng):
    masks = rng.integers(0, 5, (3, 32, 32))
    pairs = [LabeledImage(rng.uniform(0, 1, (32, 32, 3)), m) for m in masks]
    assert image_label_alignment(pairs, FixedOracle(masks)) == 1.0
    assert image_label_alignment(pairs, FixedOracle((masks + 1) % 5)) == 0.0
    with pytest.raises(ContractError):
        image_label_alignment([], FixedOracle(masks))


def test_memorization_with_known_offsets():
    """Generated images offset by 0.1 and 0.2 per value from their nearest training image."""
    train = np.stack([np.zeros((2, 2, 3)), np.full((2, 2, 3), 5.0)])
    gen = np.stack([train[0] + 0.1, train[1] - 0.2])
    result = memorization_distance(gen, train)
    d = np.sqrt(12) * np.array([0.1, 0.2])
    assert np.allclose(result.distances, d)
    assert result.mean == pytest.approx(d.mean())
    assert result.p05 == pytest.approx(d[0] + 0.05 * (d[1] - d[0]))
    assert result.to_dict()["n"] == 2
    assert memorization_distance(train, train).mean == 0.0
    with pytest.raises(ContractError):
        memorization_distance(gen, train[:0])


def test_memorization_distance_grows_with_noise(rng):
    train = rng.uniform(0, 1, (8, 32, 32, 3))
    noise = rng.normal(0, 1, train.shape)
    distances = [memorization_distance(train + s * noise, train).mean for s in (0.01, 0.05, 0.2)]
    assert distances[0] < distances[1] < distances[2]


def test_metric_report_roundtrip(tmp_path):
    report = MetricReport("run", meta={"config_hash": "abc"})
    report.add("mmd_source", 0.0, n=16, seeds=3, raw=-0.002)
    metric = report.add_seeded("fewshot_mixed", {0: 0.5, 1: 0.7}, n=12)
    assert metric.value == pytest.approx(0.6)
    assert metric.meta["std"] == pytest.approx(0.1)
    assert metric.seeds == [0, 1]
    loaded = MetricReport.from_yaml(report.to_yaml(tmp_path / "report.yaml"))
    assert loaded.value("fewshot_mixed") == pytest.approx(0.6)
    assert loaded.metrics["mmd_source"].meta == {"raw": -0.002}
    assert loaded.value("missing", default=-1.0) == -1.0
    with pytest.raises(ContractError):
        report.add("empty", 1.0, n=0, seeds=[0])


def test_image_grid_is_lossless(tmp_path):
    row = np.zeros((2, 4, 4, 3))
    row[1, ..., 0] = 1.0
    path = save_image_grid([row, row[:1]], tmp_path / "grid.png", pad=1, scale=1)
    img = cv2.cvtColor(cv2.imread(str(path)), cv2.COLOR_BGR2RGB)
    assert img.shape == (2 * 5 + 1, 2 * 5 + 1, 3)
    assert tuple(img[1, 1]) == (0, 0, 0)
    assert tuple(img[1, 6]) == (255, 0, 0)
    assert tuple(img[6, 6]) == (255, 255, 255)
    with pytest.raises(ContractError):
        save_image_grid([], tmp_path / "none.png")
