"""
Tests for the toy segmenter, its training protocols and the style classifier.
"""

import numpy as np
import pytest

from calora.errors import ContractError
from calora.evaluation import (
    DomainTable,
    ToySegmenter,
    ToyStyleClassifier,
    dg_evaluation,
    few_shot_protocol,
    prompt_adherence,
    train_style_classifier,
    train_toy_segmenter,
)
from calora.evaluation.segmenter import pixel_features
from calora.evaluation.style_classifier import style_features
from calora.world import STYLES, LabeledImage, sample_dataset


@pytest.fixture
def generated(source_items):
    """Source renders relabelled as generated pairs."""
    return [LabeledImage(item.image, item.mask, provenance={"style": "foggy"}) for item in source_items]


def test_pixel_features_shape():
    feats = pixel_features(np.zeros((2, 32, 32, 3)))
    assert feats.shape == (2, 32, 32, 29)
    assert feats[0, 0, 0, -2:].tolist() == [-1.0, -1.0]
    assert feats[0, -1, -1, -2:].tolist() == [1.0, 1.0]


def test_mixed_batches_are_half_real(source_items, generated):
    """The audit counts exactly as many real as generated samples."""
    _, audit = train_toy_segmenter(source_items, generated, iterations=3, batch_size=4, mix=True)
    assert audit.real_seen == 6 and audit.generated_seen == 6
    assert audit.real_fraction == 0.5
    _, plain = train_toy_segmenter(source_items, iterations=2, batch_size=4)
    assert plain.real_fraction == 1.0


def test_mixing_contract_errors(source_items, generated):
    with pytest.raises(ContractError):
        train_toy_segmenter(source_items, None, iterations=1, mix=True)
    with pytest.raises(ContractError):
        train_toy_segmenter(source_items, generated, iterations=1, batch_size=3, mix=True)
    with pytest.raises(ContractError):
        train_toy_segmenter([], iterations=1)


def test_segmenter_learns_the_source(source_items):
    segmenter, result = train_toy_segmenter(source_items, iterations=40, batch_size=4, lr=1e-2)
    assert np.mean(result.losses[-5:]) < np.mean(result.losses[:5])
    preds = segmenter.predict(np.stack([i.image for i in source_items]), batch_size=4)
    assert preds.shape == (6, 32, 32) and preds.dtype == np.int64
    assert 0.0 <= segmenter.evaluate(source_items) <= 1.0
    with pytest.raises(ContractError):
        segmenter.evaluate([])


def test_continued_training_starts_from_the_given_segmenter(source_items):
    base = ToySegmenter(seed=0)
    before = base.encode.weight.data.copy()
    continued, _ = train_toy_segmenter(source_items, iterations=1, batch_size=2, segmenter=base)
    assert continued is base
    assert not np.array_equal(base.encode.weight.data, before)


def test_few_shot_protocol_arms(source_items, generated):
    test = sample_dataset("clearday", "driving", 3, seed=9)
    scores = few_shot_protocol(source_items, generated, test, iterations=3, batch_size=2, lr=1e-2, seed=0)
    assert sorted(scores) == ["baseline", "baseline_ft", "mixed"]
    assert all(0.0 <= v <= 1.0 for v in scores.values())
    assert "mixed" not in few_shot_protocol(source_items, [], test, iterations=3, batch_size=2, lr=1e-2, seed=0)


def test_domain_table(tmp_path, source_items):
    segmenter = ToySegmenter(seed=1)
    domains = {"clearday": source_items[:2], "night": source_items[2:4]}
    table = dg_evaluation(segmenter, domains, source="clearday")
    assert list(table.scores) == ["clearday", "night"]
    assert table.average == pytest.approx(np.mean(list(table.scores.values())))
    assert table.shifted_average() == pytest.approx(table.scores["night"])
    assert DomainTable({"a": 0.2, "b": float("nan")}).average == pytest.approx(0.2)
    lines = table.to_csv(tmp_path / "dg.csv").read_text().splitlines()
    assert lines[0] == "domain,miou"
    assert lines[-2].startswith("average,") and lines[-1].startswith("shifted_average,")


def test_shifted_average_leaves_out_the_source_row():
    table = DomainTable({"clearday": 0.9, "night": 0.3, "foggy": 0.5}, source="clearday")
    assert table.shifted_average() == pytest.approx(0.4)
    assert table.average == pytest.approx(0.5666666666666667)
    assert table.shifted_average("night") == pytest.approx(0.7)
    assert DomainTable({"night": 0.3, "foggy": 0.5}).shifted_average() == pytest.approx(0.4)


def test_source_row_scores_highest_for_a_source_trained_segmenter(source_items):
    segmenter, _ = train_toy_segmenter(source_items, iterations=60, batch_size=4, lr=1e-2, seed=0)
    styles = ["clearday", "night", "sketch"]
    domains = {s: sample_dataset(s, "driving", 4, seed=40 + i) for i, s in enumerate(styles)}
    table = dg_evaluation(segmenter, domains, source="clearday")
    assert table.scores["clearday"] == max(table.scores.values())
    assert table.shifted_average() < table.scores["clearday"]


# =============================================================================
# Style classifier
# =============================================================================


@pytest.fixture
def styled():
    return [item for i, s in enumerate(STYLES) for item in sample_dataset(s, "driving", 4, seed=20 + i)]


def test_style_features_shape(styled):
    feats = style_features(np.stack([i.image for i in styled]))
    assert feats.shape == (len(styled), 12)
    assert np.all(np.isfinite(feats))


def test_style_classifier_separates_styles(styled):
    clf = train_style_classifier(styled, iterations=300, lr=0.05, seed=0)
    images = np.stack([i.image for i in styled])
    labels = np.array([STYLES.index(i.style) for i in styled])
    assert np.mean(clf.predict(images) == labels) >= 0.8
    night = np.stack([i.image for i in styled if i.style == "night"])
    result = prompt_adherence(night, "night", clf)
    assert result.n == 4
    assert 0.0 <= result.accuracy <= 1.0 and result.mean_log_prob <= 0.0


def test_adherence_with_shuffled_style_labels_is_near_chance(styled):
    """A classifier fit on permuted labels scores held-out renders no better than chance."""
    order = np.random.default_rng(0).permutation(len(styled))
    shuffled = [LabeledImage(item.image, item.mask, provenance={"style": styled[j].style})
                for item, j in zip(styled, order)]
    held_out = {s: np.stack([i.image for i in sample_dataset(s, "driving", 8, seed=60 + k)])
                for k, s in enumerate(STYLES)}
    true_clf = train_style_classifier(styled, iterations=300, lr=0.05, seed=0)
    shuffled_clf = train_style_classifier(shuffled, iterations=300, lr=0.05, seed=0)
    true_acc = np.mean([prompt_adherence(x, s, true_clf).accuracy for s, x in held_out.items()])
    shuffled_acc = np.mean([prompt_adherence(x, s, shuffled_clf).accuracy for s, x in held_out.items()])
    assert shuffled_acc <= 0.5
    assert true_acc >= shuffled_acc + 0.3


def test_style_classifier_errors(styled):
    with pytest.raises(ContractError):
        ToyStyleClassifier().log_proba(np.zeros((1, 32, 32, 3)))
    with pytest.raises(ContractError):
        train_style_classifier([])
    clf = train_style_classifier(styled, iterations=5)
    with pytest.raises(ContractError):
        prompt_adherence(np.zeros((1, 32, 32, 3)), "rainy", clf)
    with pytest.raises(ContractError):
        prompt_adherence(np.zeros((0, 32, 32, 3)), "night", clf)
