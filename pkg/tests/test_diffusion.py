"""
Tests for the noise schedule, denoiser, sampler, training loop and checkpoints.
"""

import numpy as np
import pytest

from calora.diffusion import (
    add_noise,
    apply_prompt_dropout,
    ddim_timesteps,
    denoiser_forward,
    diffusion_loss,
    extract_features,
    load_checkpoint,
    make_routed_denoiser,
    make_schedule,
    sample_cfg,
    sample_cfg_batch,
    sample_unconditional,
    save_checkpoint,
    to_model_space,
    to_pixel_space,
    train_diffusion,
)
from calora.binfmt import read_container
from calora.config import PretrainConfig
from calora.errors import ContractError, DimensionError
from calora.world import NULL, PromptTokens, prompt_of
from calora.world.prompts import style_token


def test_schedule_coefficients():
    """alpha_bar is the running product of 1 - beta and decreases from near 1."""
    s = make_schedule(200)
    assert np.array_equal(s.alpha_bar, np.cumprod(1.0 - s.betas))
    assert np.all(np.diff(s.alpha_bar) < 0)
    ab = s.alpha_bar_at(np.arange(1, 201))
    assert np.allclose(np.sqrt(ab) ** 2 + np.sqrt(1.0 - ab) ** 2, 1.0, atol=1e-15)


def test_add_noise_endpoints_are_exact():
    """Zero noise leaves sqrt(ab) x0; a zero image leaves sqrt(1 - ab) eps."""
    s = make_schedule(100)
    rng = np.random.default_rng(0)
    x0 = rng.uniform(-1, 1, (2, 4, 4, 3))
    eps = rng.standard_normal(x0.shape)
    ab = s.alpha_bar[29]
    assert np.array_equal(add_noise(x0, np.zeros_like(x0), 30, s), np.sqrt(ab) * x0)
    assert np.array_equal(add_noise(np.zeros_like(x0), eps, 30, s), np.sqrt(1.0 - ab) * eps)


def test_add_noise_moments():
    """Over 10^4 draws the noised value has mean sqrt(ab) x0 and variance 1 - ab."""
    s = make_schedule(200)
    t = 120
    ab = s.alpha_bar[t - 1]
    n = 10_000
    x0 = np.full((n, 1), 0.5)
    eps = np.random.default_rng(0).standard_normal((n, 1))
    x_t = add_noise(x0, eps, t, s).ravel()
    mean_se = np.sqrt((1.0 - ab) / n)
    var_se = (1.0 - ab) * np.sqrt(2.0 / (n - 1))
    assert abs(x_t.mean() - np.sqrt(ab) * 0.5) < 3 * mean_se
    assert abs(x_t.var(ddof=1) - (1.0 - ab)) < 3 * var_se


def test_add_noise_per_item_timesteps_and_errors():
    s = make_schedule(50)
    x0 = np.ones((2, 3))
    out = add_noise(x0, np.zeros_like(x0), np.array([1, 50]), s)
    assert out[0, 0] == pytest.approx(np.sqrt(s.alpha_bar[0]))
    assert out[1, 0] == pytest.approx(np.sqrt(s.alpha_bar[49]))
    with pytest.raises(ContractError):
        add_noise(x0, x0, 0, s)
    with pytest.raises(ContractError):
        add_noise(x0, x0, 51, s)
    with pytest.raises(DimensionError):
        add_noise(x0, np.zeros((3, 3)), 1, s)


def test_pixel_model_space_roundtrip():
    x = np.linspace(0, 1, 11)
    assert np.allclose(to_pixel_space(to_model_space(x)), x)
    assert to_pixel_space(np.array([-3.0, 3.0])).tolist() == [0.0, 1.0]


def test_ddim_timesteps_descend_to_one():
    ts = ddim_timesteps(200, 25)
    assert ts[0] == 200 and ts[-1] == 1
    assert len(ts) == 25 and np.all(np.diff(ts) < 0)
    assert ddim_timesteps(200, 1).tolist() == [200]


def test_forward_shapes_and_features(tiny_model, tiny_config):
    """eps has the image shape; cross-attention taps sum to one over tokens."""
    x = np.zeros((2, 32, 32, 3))
    eps, feats = tiny_model(x, 5, [prompt_of("clearday", "driving"), PromptTokens.null()])
    assert eps.shape == (2, 32, 32, 3)
    assert len(feats.feature_maps) == tiny_config.blocks
    assert feats.feature_maps[0].shape == (2, 8, 8, tiny_config.width)
    assert np.allclose(feats.cross_attn_maps[0].sum(axis=-1), 1.0)
    with pytest.raises(DimensionError):
        tiny_model(np.zeros((1, 16, 16, 3)), 5, PromptTokens.null())


def test_guidance_zero_is_unconditional(tiny_model):
    """Guidance 0 ignores the prompt entirely."""
    prompts = [prompt_of("night", "driving", ["road"]), prompt_of("sketch", "closeup")]
    guided = sample_cfg_batch(tiny_model, prompts, [1, 2], steps=3, guidance=0.0)
    uncond = sample_unconditional(tiny_model, [1, 2], steps=3)
    assert np.array_equal(guided, uncond)


def test_sample_noise_comes_from_its_own_seed(tiny_model):
    """A sample does not depend on which other samples share its batch."""
    p = prompt_of("foggy", "driving")
    batch = sample_cfg_batch(tiny_model, [p, p], [10, 20], steps=3, guidance=2.0)
    alone = sample_cfg_batch(tiny_model, [p], [20], steps=3, guidance=2.0)
    assert np.allclose(batch[1], alone[0], atol=1e-10)
    assert batch.min() >= 0.0 and batch.max() <= 1.0
    with pytest.raises(ContractError):
        sample_cfg_batch(tiny_model, [p], [1, 2])
    with pytest.raises(ContractError):
        sample_cfg_batch(tiny_model, [p], [1], guidance=-1.0)


def test_sample_cfg_is_seeded(tiny_model):
    """One guided sample is a pure function of the prompt and the seed."""
    p = prompt_of("snowy", "topdown", ["road"])
    a = sample_cfg(tiny_model, p, steps=3, guidance=3.0, seed=5)
    b = sample_cfg(tiny_model, p, steps=3, guidance=3.0, seed=5)
    assert a.shape == (32, 32, 3)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, sample_cfg(tiny_model, p, steps=3, guidance=3.0, seed=6))


def test_denoiser_forward_matches_module_call(tiny_model, rng):
    x = rng.standard_normal((1, 32, 32, 3))
    p = prompt_of("night", "closeup", ["pedestrian"])
    eps, feats = denoiser_forward(tiny_model, x, 9, p)
    assert np.array_equal(eps.data, tiny_model(x, 9, p)[0].data)
    assert len(feats.feature_maps) == 1


def test_prompt_dropout_extremes():
    ids = np.tile(prompt_of("clearday", "driving").array(), (5, 1))
    rng = np.random.default_rng(0)
    out, dropped = apply_prompt_dropout(ids, 1.0, rng)
    assert dropped.all() and np.all(out == NULL)
    out, dropped = apply_prompt_dropout(ids, 0.0, rng)
    assert not dropped.any() and np.array_equal(out, ids)


def test_prompt_dropout_rate_matches_probability():
    ids = np.tile(prompt_of("clearday", "driving").array(), (10_000, 1))
    out, dropped = apply_prompt_dropout(ids, 0.1, np.random.default_rng(0))
    assert abs(dropped.mean() - 0.1) <= 0.015
    assert np.all(out[dropped] == NULL)
    assert np.array_equal(out[~dropped], ids[~dropped])


def test_diffusion_loss_needs_rng_without_t_and_eps(tiny_model):
    with pytest.raises(ContractError):
        diffusion_loss(tiny_model, np.zeros((1, 32, 32, 3)), PromptTokens.null())


def test_train_diffusion_marks_null_dropout(tiny_model, source_items):
    """A short run records finite losses and the null-prompt fraction."""
    config = PretrainConfig(iterations=4, batch_size=2, lr=1e-3, null_prompt_dropout=0.5)
    result = train_diffusion(tiny_model, source_items, config, seed=0)
    assert len(result.losses) == 4 and np.all(np.isfinite(result.losses))
    assert tiny_model.trained_with_null_dropout
    assert result.prompts_seen == 8
    assert 0.0 <= result.to_dict()["null_prompt_fraction"] <= 1.0
    with pytest.raises(ContractError):
        train_diffusion(tiny_model, [], config, seed=0)


def test_checkpoint_roundtrip_is_bitwise(tmp_path, tiny_model):
    tiny_model.trained_with_null_dropout = True
    path = save_checkpoint(tiny_model, tmp_path / "model.ckpt", {"stage": "test"})
    loaded, meta = load_checkpoint(path)
    assert meta == {"stage": "test"}
    assert loaded.trained_with_null_dropout
    for (name, a), (_, b) in zip(tiny_model.named_parameters(), loaded.named_parameters()):
        assert np.array_equal(a.data, b.data), name
    x = np.random.default_rng(0).uniform(-1, 1, (1, 32, 32, 3))
    p = prompt_of("snowy", "topdown")
    assert np.array_equal(tiny_model(x, 7, p)[0].data, loaded(x, 7, p)[0].data)


def test_checkpoint_rejects_wrong_magic(tmp_path, tiny_model):
    path = save_checkpoint(tiny_model, tmp_path / "model.ckpt")
    with pytest.raises(ContractError):
        read_container(path, b"CALRLORA")


def test_extract_features_is_seeded(tiny_model, source_items):
    item = source_items[0]
    p = prompt_of("clearday", "driving")
    a = extract_features(tiny_model, item.image, 5, p, eps_seed=3)
    b = extract_features(tiny_model, item.image, 5, p, eps_seed=3)
    assert np.array_equal(a.feature_maps[0], b.feature_maps[0])


def test_routed_denoiser_blocks_style_elsewhere(small_config):
    """Only the routed head can see style tokens, and only it writes to the output."""
    model = make_routed_denoiser(small_config, block=1, head=0)
    tok = style_token("clearday")
    assert model.key_mask[1, 0, tok]
    assert not model.key_mask[0, 0, tok] and not model.key_mask[1, 1, tok]
    dh = small_config.dim_head
    assert np.all(model.blocks[1].attn_cross.to_out.weight.data[:, dh:] == 0.0)
    assert np.any(model.blocks[1].attn_cross.to_out.weight.data[:, :dh] != 0.0)
    with pytest.raises(ContractError):
        make_routed_denoiser(small_config, block=2, head=0)
