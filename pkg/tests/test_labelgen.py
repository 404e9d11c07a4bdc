"""
Tests for the label generator and paired dataset generation.
"""

import numpy as np
import pytest

from calora.config import LabelGenConfig
from calora.diffusion import extract_features_batch
from calora.errors import ContractError
from calora.labelgen import (
    LabelGenerator,
    build_feature_bank,
    build_generation_requests,
    class_attention_maps,
    generate_dataset,
    generate_pair,
    load_label_generator,
    predict_label,
    relabel_pairs,
    save_label_generator,
    train_label_generator,
)
from calora.evaluation import miou
from calora.world import NUM_CLASSES, LabeledImage, prompt_for_image, prompt_of
from calora.world.dataset import condition_seed
from calora.world.prompts import class_token

CONFIG = LabelGenConfig(iterations=60, t_feat=5, lr=1e-2, batch_size=4, feature_views=2, hidden=16)


@pytest.fixture
def trained(tiny_model, source_items):
    return train_label_generator(tiny_model, source_items[:4], CONFIG, seed=0)


def test_training_reduces_loss(trained):
    """A small set is fit: late losses sit below early ones."""
    _, losses = trained
    assert len(losses) == 60 and np.all(np.isfinite(losses))
    assert np.mean(losses[-10:]) < np.mean(losses[:10])


def test_training_is_deterministic(tiny_model, source_items, trained):
    generator, losses = trained
    again, again_losses = train_label_generator(tiny_model, source_items[:4], CONFIG, seed=0)
    assert again_losses == losses
    for (name, a), (_, b) in zip(generator.named_parameters(), again.named_parameters()):
        assert np.array_equal(a.data, b.data), name


def test_training_never_touches_the_denoiser(tiny_model, source_items):
    before = {name: p.data.copy() for name, p in tiny_model.named_parameters()}
    train_label_generator(tiny_model, source_items[:2], CONFIG, seed=1)
    for name, p in tiny_model.named_parameters():
        assert np.array_equal(p.data, before[name]), name
    with pytest.raises(ContractError):
        train_label_generator(tiny_model, [], CONFIG, seed=1)


def test_feature_bank_views_use_distinct_noise(tiny_model, source_items):
    bank, ids = build_feature_bank(tiny_model, source_items[:3], t_feat=5, views=2, seed=0, batch_size=2)
    assert len(bank) == 2 and bank[0].batch_size == 3
    assert ids.shape == (3, 8)
    assert not np.array_equal(bank[0].feature_maps[0], bank[1].feature_maps[0])


def test_class_attention_for_absent_classes_is_zero(tiny_model, source_items):
    """Dropping a class token from the prompt zeroes that class's attention channel."""
    item = source_items[0]
    full = prompt_for_image(item)
    present = full.classes[0]
    ablated = full.without_class(present)
    feats = extract_features_batch(tiny_model, np.stack([item.image] * 2), 5, [full, ablated], [0, 0])
    ids = np.stack([full.array(), ablated.array()])
    maps = class_attention_maps(feats, ids)
    k = class_token(present) - class_token(0)
    assert maps.shape == (2, 8, 8, NUM_CLASSES)
    assert np.any(maps[0, ..., k] > 0)
    assert np.all(maps[1, ..., k] == 0)
    assert np.all(maps.sum(axis=-1) <= 1.0 + 1e-12)


def test_dropping_a_class_token_changes_its_logits(tiny_model, source_items, trained):
    generator, _ = trained
    item = source_items[0]
    full = prompt_for_image(item)
    present = full.classes[0]
    ablated = full.without_class(present)
    feats = extract_features_batch(tiny_model, np.stack([item.image] * 2), 5, [full, ablated], [0, 0])
    logits = generator(feats, [full, ablated]).data
    k = class_token(present) - class_token(0)
    assert not np.allclose(logits[0, ..., k], logits[1, ..., k])


def test_single_image_is_fit_exactly(tiny_model):
    """Two regions split on a feature-cell boundary are reproduced pixel for pixel."""
    image = np.zeros((32, 32, 3))
    image[:16] = [0.35, 0.55, 0.9]
    image[16:] = [0.4, 0.4, 0.4]
    mask = np.zeros((32, 32), dtype=np.int64)
    mask[16:] = 1
    item = LabeledImage(image, mask, provenance={"style": "clearday", "viewpoint": "driving"})
    config = LabelGenConfig(iterations=300, t_feat=5, lr=2e-2, batch_size=1, feature_views=1, hidden=16)
    generator, losses = train_label_generator(tiny_model, [item], config, seed=0)
    label = predict_label(tiny_model, generator, image, 5, condition_seed(0, 0, 0), prompt_for_image(item))
    assert losses[-1] < losses[0]
    assert miou(label, mask)[0] == 1.0


def test_prediction_and_file_roundtrip(tmp_path, tiny_model, source_items, trained):
    generator, _ = trained
    item = source_items[4]
    prompt = prompt_for_image(item)
    label = predict_label(tiny_model, generator, item.image, 5, 11, prompt)
    assert label.shape == (32, 32) and label.dtype == np.int64
    assert label.min() >= 0 and label.max() < NUM_CLASSES
    loaded, meta = load_label_generator(save_label_generator(generator, tmp_path / "labelgen.bin", {"t": 5}))
    assert meta == {"t": 5}
    assert np.array_equal(predict_label(tiny_model, loaded, item.image, 5, 11, prompt), label)


def test_generator_rejects_features_from_another_depth(small_model, tiny_config, source_items):
    generator = LabelGenerator(tiny_config, hidden=8)
    item = source_items[0]
    feats = extract_features_batch(small_model, item.image[None], 5, [prompt_for_image(item)], [0])
    with pytest.raises(ContractError):
        generator(feats, [prompt_for_image(item)])


# =============================================================================
# Requests and pairs
# =============================================================================


def test_requests_count_and_balance(source_items):
    """per_condition prompts per condition plus the balanced extras naming the class."""
    masks = [item.mask for item in source_items]
    requests = build_generation_requests(["clearday", "foggy"], "driving", 3, masks, seed=0,
                                         balanced_class="pedestrian", balanced_count=2)
    assert len(requests) == 10
    assert [r.condition for r in requests] == ["clearday"] * 5 + ["foggy"] * 5
    assert all(r.prompt.style == r.condition and r.prompt.viewpoint == "driving" for r in requests)
    for r in requests[3:5] + requests[8:10]:
        assert "pedestrian" in r.prompt.classes
    seeds = [r.sample_seed for r in requests] + [r.eps_seed for r in requests]
    assert len(set(seeds)) == len(seeds)
    again = build_generation_requests(["clearday", "foggy"], "driving", 3, masks, seed=0,
                                      balanced_class="pedestrian", balanced_count=2)
    assert again == requests


def test_requests_without_label_classes():
    requests = build_generation_requests(["night"], "topdown", 2, [], seed=0, class_names_from_labels=False)
    assert [str(r.prompt) for r in requests] == ["STY_night VIEW_topdown"] * 2


def test_request_errors(source_items):
    masks = [source_items[0].mask]
    with pytest.raises(ContractError):
        build_generation_requests(["rainy"], "driving", 1, masks, seed=0)
    with pytest.raises(ContractError):
        build_generation_requests(["night"], "driving", 1, [], seed=0)
    with pytest.raises(ContractError):
        build_generation_requests(["night"], "driving", 1, masks, seed=0, balanced_class="tree")


def test_generate_pair_provenance(tiny_model, trained):
    generator, _ = trained
    prompt = prompt_of("foggy", "driving", ["road", "vehicle"])
    pair = generate_pair(tiny_model, generator, prompt, sample_seed=5, t_feat=5, steps=3, model_id="abc123")
    assert pair.spec is None
    assert pair.provenance["model_id"] == "abc123"
    assert pair.provenance["style"] == "foggy" and pair.provenance["condition"] == "foggy"
    assert pair.provenance["prompt"] == "STY_foggy VIEW_driving CLS_road CLS_vehicle"
    assert pair.provenance["sample_seed"] == 5


def test_relabel_pairs_uses_the_generation_prompt(tiny_model, trained, source_items):
    """Relabeling through the same model reproduces the stored masks."""
    generator, _ = trained
    prompts = [prompt_of("foggy", "driving", ["road", "vehicle"]), prompt_of("night", "driving", ["sky"])]
    pairs = [generate_pair(tiny_model, generator, p, sample_seed=s, t_feat=5, steps=3)
             for s, p in enumerate(prompts)]
    for pair in pairs:
        assert np.array_equal(relabel_pairs(tiny_model, generator, [pair], 5)[0], pair.mask)
    assert relabel_pairs(tiny_model, generator, pairs, 5).shape == (2, 32, 32)
    with pytest.raises(ContractError):
        relabel_pairs(tiny_model, generator, [source_items[0]], 5)


def test_generate_dataset_matches_single_pairs(tiny_model, trained, source_items):
    """Batched generation yields the same pairs as generating each request alone."""
    generator, _ = trained
    requests = build_generation_requests(["clearday", "night"], "driving", 2,
                                         [i.mask for i in source_items], seed=1)
    pairs = generate_dataset(tiny_model, generator, requests, t_feat=5, steps=3, batch_size=3)
    assert len(pairs) == 4
    r = requests[3]
    alone = generate_pair(tiny_model, generator, r.prompt, r.sample_seed, t_feat=5, eps_seed=r.eps_seed, steps=3)
    assert np.allclose(pairs[3].image, alone.image, atol=1e-10)
    assert pairs[3].provenance["condition"] == "night"
