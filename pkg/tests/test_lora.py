"""
Tests for head-restricted low-rank adapters and adapter training.
"""

import copy

import numpy as np
import pytest

from calora.autograd import Linear
from calora.autograd.heads import ProjectionShape
from calora.config import LoraConfig
from calora.errors import ContractError
from calora.lora import (
    CALoRAAdapter,
    adapted_projection_forward,
    adapter_parameters,
    attach_adapters,
    detach_adapters,
    finetune_lora,
    install_adapters,
    load_adapters,
    merge_delta,
    save_adapters,
    selected_heads,
)
from calora.sensitivity import SelectionMask, UnitId, handcrafted_mask
from calora.world import prompt_of

SHAPE = ProjectionShape(12, 12, 3, 4)


def random_adapter(kind, heads, rank, rng, alpha=1.0):
    adapter = CALoRAAdapter(kind, SHAPE, heads, rank, alpha, rng)
    adapter.B.data = rng.standard_normal(adapter.B.shape)
    return adapter


def head_mask(units, total=32):
    ids = [UnitId.parse(u) for u in units]
    return SelectionMask("head", ids, len(ids) / total, total)


def forward(model, x, prompt):
    return model(x, 9, prompt)[0].data


@pytest.fixture
def linear(rng):
    lin = Linear(12, 12, rng)
    lin.bias.data = rng.standard_normal(12)
    return lin


@pytest.mark.parametrize("kind", ["IN", "OUT"])
def test_fresh_adapter_is_transparent(kind, linear, rng):
    """B starts at zero, so the adapted output equals the base output bitwise."""
    adapter = CALoRAAdapter(kind, SHAPE, [1], 2, rng=rng)
    x = rng.standard_normal((5, 12))
    assert np.array_equal(adapted_projection_forward(x, linear, adapter).data, linear(x).data)


@pytest.mark.parametrize("kind,heads,alpha", [("IN", [0], 1.0), ("IN", [0, 2], 0.5), ("OUT", [1], 2.0),
                                              ("OUT", [0, 1, 2], 1.0)])
def test_merged_delta_matches_adapter(kind, heads, alpha, linear, rng):
    """The adapter's forward equals a dense projection with W + delta W."""
    adapter = random_adapter(kind, heads, 2, rng, alpha)
    x = rng.standard_normal((3, 5, 12))
    merged = x @ (linear.weight.data + merge_delta(adapter)).T + linear.bias.data
    assert np.max(np.abs(adapted_projection_forward(x, linear, adapter).data - merged)) < 1e-10


def test_delta_support_is_the_selected_heads(rng):
    """IN adapters touch only selected rows, OUT adapters only selected columns."""
    delta = merge_delta(random_adapter("IN", [1], 3, rng))
    assert np.all(delta[:4] == 0) and np.all(delta[8:] == 0) and np.any(delta[4:8] != 0)
    delta = merge_delta(random_adapter("OUT", [0, 2], 3, rng))
    assert np.all(delta[:, 4:8] == 0) and np.any(delta[:, :4] != 0) and np.any(delta[:, 8:] != 0)


def test_all_heads_match_dense_lora(linear, rng):
    """Selecting every head reduces to ordinary LoRA: y = xW^T + b + alpha x A^T B^T."""
    adapter = random_adapter("IN", [0, 1, 2], 4, rng, alpha=0.7)
    x = rng.standard_normal((6, 12))
    dense = linear(x).data + 0.7 * (x @ adapter.A.data.T @ adapter.B.data.T)
    assert np.allclose(adapted_projection_forward(x, linear, adapter).data, dense, atol=1e-12)


def test_rank_must_fit_the_restricted_width(rng):
    """With one selected head of width 4, rank is limited to [1, 4]."""
    CALoRAAdapter("IN", SHAPE, [2], 4, rng=rng)
    with pytest.raises(ContractError):
        CALoRAAdapter("IN", SHAPE, [2], 5, rng=rng)
    with pytest.raises(ContractError):
        CALoRAAdapter("OUT", SHAPE, [2], 0, rng=rng)
    with pytest.raises(ContractError):
        CALoRAAdapter("IN", SHAPE, [3], 1, rng=rng)
    with pytest.raises(ContractError):
        CALoRAAdapter("MID", SHAPE, [0], 1, rng=rng)


def test_merge_delta_rejects_other_shapes(rng):
    with pytest.raises(ContractError):
        merge_delta(random_adapter("IN", [0], 1, rng), ProjectionShape(8, 8, 2, 4))


# =============================================================================
# Attaching to a denoiser
# =============================================================================


def test_selected_heads_grouping(small_model):
    mask = head_mask(["b0.self.Q.h1", "b1.cross.V.h0", "b1.cross.V.h1"])
    assert selected_heads(small_model, mask) == {(0, "self", "Q"): [1], (1, "cross", "V"): [0, 1]}


def test_attach_is_transparent_and_freezes_base(small_model, rng):
    x = rng.uniform(-1, 1, (2, 32, 32, 3))
    p = prompt_of("clearday", "driving", ["road"])
    before = forward(small_model, x, p)
    adapters = attach_adapters(small_model, handcrafted_mask(2, "cross"), rank=2, seed=0)
    assert sorted(adapters) == ["b0.cross.K", "b0.cross.OUT", "b0.cross.Q", "b0.cross.V",
                                "b1.cross.K", "b1.cross.OUT", "b1.cross.Q", "b1.cross.V"]
    assert np.array_equal(forward(small_model, x, p), before)
    assert not any(p.requires_grad for p in small_model.base_parameters())
    assert len(adapter_parameters(small_model)) == 16
    with pytest.raises(ContractError):
        attach_adapters(small_model, handcrafted_mask(2, "cross"), rank=2)
    detach_adapters(small_model)
    assert adapter_parameters(small_model) == []


def test_empty_mask_attaches_nothing(small_model):
    assert attach_adapters(small_model, SelectionMask.empty(total=32), rank=2) == {}
    assert adapter_parameters(small_model) == []
    assert any(p.requires_grad for p in small_model.base_parameters())


def test_finetune_leaves_base_bitwise_unchanged(small_model, source_items):
    """Only adapter factors move; every base parameter is identical after training."""
    adapters = attach_adapters(small_model, head_mask(["b1.cross.Q.h0", "b1.self.OUT.h1"]), rank=2, seed=0)
    snapshot = {name: p.data.copy() for name, p in small_model.named_parameters() if ".adapter." not in name}
    config = LoraConfig(iterations=3, batch_size=2, lr=1e-2)
    result = finetune_lora(small_model, source_items, config, seed=0)
    assert len(result.losses) == 3
    for name, p in small_model.named_parameters():
        if ".adapter." not in name:
            assert np.array_equal(p.data, snapshot[name]), name
    assert all(np.any(a.B.data != 0) for a in adapters.values())


def test_finetune_contract_errors(small_model, source_items):
    config = LoraConfig(iterations=1, batch_size=2)
    with pytest.raises(ContractError):
        finetune_lora(small_model, source_items, config, seed=0)
    attach_adapters(small_model, head_mask(["b0.self.V.h0"]), rank=1)
    small_model.requires_grad_(True)
    with pytest.raises(ContractError):
        finetune_lora(small_model, source_items, config, seed=0)


def test_finetune_rejects_an_empty_source_set(small_model):
    attach_adapters(small_model, head_mask(["b0.cross.V.h0"]), rank=1)
    with pytest.raises(ContractError, match="empty"):
        finetune_lora(small_model, [], LoraConfig(iterations=1, batch_size=2), seed=0)


def test_adapter_file_roundtrip(tmp_path, small_model, rng):
    """Saved adapters reinstall on a fresh copy of the base and reproduce its outputs."""
    fresh = copy.deepcopy(small_model)
    adapters = attach_adapters(small_model, head_mask(["b0.cross.K.h1", "b1.self.OUT.h0"]), rank=2, seed=3)
    for adapter in adapters.values():
        adapter.B.data = rng.standard_normal(adapter.B.shape)
    path = save_adapters(adapters, tmp_path / "adapters.lora", {"proportion": 0.0625})
    loaded, meta = load_adapters(path)
    assert meta == {"proportion": 0.0625}
    assert sorted(loaded) == sorted(adapters)
    install_adapters(fresh, loaded)
    x = rng.uniform(-1, 1, (1, 32, 32, 3))
    p = prompt_of("night", "topdown")
    assert np.array_equal(forward(fresh, x, p), forward(small_model, x, p))


def test_install_rejects_mismatched_shapes(tiny_model, rng):
    adapter = CALoRAAdapter("IN", ProjectionShape(16, 16, 2, 8), [0], 1, rng=rng, unit="b0.self.Q")
    with pytest.raises(ContractError):
        install_adapters(tiny_model, {"b0.self.Q": adapter})


def test_empty_adapter_file(tmp_path):
    loaded, _ = load_adapters(save_adapters({}, tmp_path / "adapters.lora"))
    assert loaded == {}
