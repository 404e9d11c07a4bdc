"""
Tests for the autograd tape, primitives and modules.
"""

import threading

import numpy as np
import pytest

from calora.autograd import (
    Linear,
    Module,
    Parameter,
    Tensor,
    apply_primitive,
    check_gradients,
    is_grad_enabled,
    no_grad,
    stop_gradient,
    upsample_bilinear,
)
from calora.autograd import ops
from calora.autograd.heads import ProjectionShape, chunk_per_head
from calora.diffusion import diffusion_loss
from calora.errors import ContractError, DimensionError
from calora.world import prompt_of

TOL = 1e-4


def weighted(out: Tensor, seed: int = 7) -> Tensor:
    """Scalar with a generic gradient: sum(out * w) for fixed random w."""
    w = np.random.default_rng(seed).standard_normal(out.shape)
    return ops.sum_(ops.mul(out, Tensor(w)))


def assert_gradients(fn, params, tol=TOL):
    errors = check_gradients(fn, params)
    assert max(errors) < tol, errors


@pytest.fixture
def params(rng):
    return {
        "a": Parameter(rng.standard_normal((2, 3, 4))),
        "b": Parameter(rng.standard_normal((4, 5))),
        "v": Parameter(rng.standard_normal((4,))),
    }


def test_matmul_and_broadcast_add(params):
    """Batched matmul and broadcasting add pass central differences."""
    a, b, v = params["a"], params["b"], params["v"]
    assert_gradients(lambda: weighted(ops.matmul(a, b)), [a, b])
    assert_gradients(lambda: weighted(ops.add(a, v)), [a, v])


def test_elementwise_primitives(params, rng):
    """sub, mul, scale and gelu."""
    a = params["a"]
    c = Parameter(rng.standard_normal((2, 3, 4)))
    assert_gradients(lambda: weighted(ops.sub(a, c)), [a, c])
    assert_gradients(lambda: weighted(ops.mul(a, c)), [a, c])
    assert_gradients(lambda: weighted(ops.scale(a, -2.5)), [a])
    assert_gradients(lambda: weighted(ops.gelu(a)), [a])


def test_shape_primitives(params):
    """transpose, reshape, slice and concat route gradients to the right entries."""
    a, v = params["a"], params["v"]
    assert_gradients(lambda: weighted(ops.transpose(a, (2, 0, 1))), [a])
    assert_gradients(lambda: weighted(ops.reshape(a, (6, 4))), [a])
    assert_gradients(lambda: weighted(a[:, 1:, ::2]), [a])
    assert_gradients(lambda: weighted(ops.concat([a, ops.reshape(ops.add(a, v), (2, 3, 4))], axis=1)), [a, v])


def test_reductions(params):
    """sum and mean over axes, with and without keepdims."""
    a = params["a"]
    assert_gradients(lambda: weighted(ops.sum_(a, axis=1)), [a])
    assert_gradients(lambda: weighted(ops.mean(a, axis=(0, 2), keepdims=True)), [a])
    assert_gradients(lambda: ops.mean(ops.mul(a, a)), [a])


def test_softmax_and_layer_norm(params, rng):
    """softmax over the last axis and layer norm with affine parameters."""
    a = params["a"]
    gamma = Parameter(rng.uniform(0.5, 1.5, size=4))
    beta = Parameter(rng.standard_normal(4))
    assert_gradients(lambda: weighted(ops.softmax_lastdim(a)), [a])
    assert_gradients(lambda: weighted(ops.layer_norm(a, gamma, beta)), [a, gamma, beta])


def test_losses(params, rng):
    """mse against a trainable target and cross-entropy over class logits."""
    a = params["a"]
    target = Parameter(rng.standard_normal((2, 3, 4)))
    labels = rng.integers(0, 4, size=(2, 3))
    assert_gradients(lambda: ops.mse(a, target), [a, target])
    assert_gradients(lambda: ops.cross_entropy(a, labels), [a])


def test_embedding_and_index_primitives(rng):
    """embed_lookup, index_add and gather_lastdim."""
    table = Parameter(rng.standard_normal((6, 3)))
    ids = np.array([[0, 2, 2], [5, 1, 0]])
    assert_gradients(lambda: weighted(ops.embed_lookup(table, ids)), [table])

    base = Parameter(rng.standard_normal((2, 3, 6)))
    low = Parameter(rng.standard_normal((2, 3, 2)))
    assert_gradients(lambda: weighted(ops.index_add(base, [4, 1], low)), [base, low])
    assert_gradients(lambda: weighted(ops.gather_lastdim(base, [5, 0, 3])), [base])


def test_index_add_leaves_other_coordinates_untouched(rng):
    """Coordinates outside the index list are bitwise equal to the base."""
    base = Tensor(rng.standard_normal((3, 8)))
    out = ops.index_add(base, [2, 3], Tensor(rng.standard_normal((3, 2))))
    keep = [0, 1, 4, 5, 6, 7]
    assert np.array_equal(out.data[:, keep], base.data[:, keep])


def test_upsample_bilinear(rng):
    """Bilinear resize is differentiable and keeps corners with aligned corners."""
    x = Parameter(rng.standard_normal((1, 3, 3, 2)))
    assert_gradients(lambda: weighted(upsample_bilinear(x, 7)), [x])
    y = upsample_bilinear(x, 7).data
    assert np.allclose(y[0, 0, 0], x.data[0, 0, 0])
    assert np.allclose(y[0, -1, -1], x.data[0, -1, -1])


def test_apply_primitive_dispatch(rng):
    """Primitives are reachable by name; unknown names are rejected."""
    x = Tensor(rng.standard_normal((3, 5)))
    assert np.allclose(apply_primitive("softmax_lastdim", x).data.sum(axis=-1), 1.0, atol=1e-12)
    assert apply_primitive("matmul", Tensor(np.ones((2, 3))), Tensor(np.ones((3, 4)))).shape == (2, 4)
    assert apply_primitive("mse", x, x).item() == 0.0
    with pytest.raises(ContractError):
        apply_primitive("conv2d", x)


def test_dimension_errors_name_the_op():
    """Mismatched shapes raise DimensionError carrying the op and the shapes."""
    with pytest.raises(DimensionError) as exc:
        ops.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 5))))
    assert exc.value.op == "matmul"
    assert exc.value.shapes == [(2, 3), (4, 5)]
    with pytest.raises(DimensionError):
        ops.index_add(Tensor(np.zeros((2, 4))), [1, 1], Tensor(np.zeros((2, 2))))


def test_end_to_end_denoiser_gradients(tiny_model, rng):
    """Full denoiser on a width-8 config matches central differences."""
    x0 = rng.uniform(-1, 1, size=(2, 32, 32, 3))
    eps = rng.standard_normal(x0.shape)
    t = np.array([3, 11])
    prompts = [prompt_of("clearday", "driving", ["road"]), prompt_of("night", "topdown", ["vehicle"])]
    block = tiny_model.blocks[0]
    checked = [block.attn_cross.to_q.weight, block.attn_self.to_v.weight, block.ff_in.weight,
               tiny_model.token_embed]

    def loss():
        return diffusion_loss(tiny_model, x0, prompts, t=t, eps=eps)

    errors = check_gradients(loss, checked, max_entries=12)
    assert max(errors) < 1e-3, errors


def test_backward_accumulates_and_requires_scalar():
    """Gradients accumulate across calls; non-scalar losses are rejected."""
    x = Parameter([3.0])
    (x * x).sum().backward()
    (x * x).sum().backward()
    assert x.grad[0] == pytest.approx(12.0)
    with pytest.raises(ContractError):
        ops.mul(Parameter([1.0, 2.0]), Tensor([1.0, 1.0])).backward()


def test_no_grad_and_stop_gradient():
    """Nothing is recorded under no_grad; stop_gradient cuts the path."""
    x = Parameter([2.0])
    with no_grad():
        y = x * x
    assert not y.requires_grad and y.node is None
    z = ops.mul(x, stop_gradient(x * 3.0))
    z.sum().backward()
    assert x.grad[0] == pytest.approx(6.0)


def test_grad_mode_is_per_thread():
    """A no_grad block on one thread leaves other threads recording."""
    seen = {}

    def worker():
        seen["enabled"] = is_grad_enabled()

    with no_grad():
        thread = threading.Thread(target=worker)
        thread.start()
        thread.join()
        assert not is_grad_enabled()
    assert seen["enabled"] is True
    assert is_grad_enabled()


def test_module_parameter_names(tiny_model):
    """Parameters get dotted names in registration order."""
    names = [n for n, _ in tiny_model.named_parameters()]
    assert "blocks.0.attn_cross.to_q.weight" in names
    assert "blocks.0.attn_self.to_out.bias" in names
    assert names.index("patch_embed.weight") < names.index("blocks.0.attn_self.to_q.weight")


def test_state_dict_roundtrip_rejects_mismatch(rng):
    """load_state_dict restores values and refuses missing keys."""

    class Pair(Module):
        def __init__(self):
            super().__init__()
            self.lin = Linear(3, 2, rng)

    a, b = Pair(), Pair()
    b.load_state_dict(a.state_dict())
    assert np.array_equal(a.lin.weight.data, b.lin.weight.data)
    with pytest.raises(ContractError):
        b.load_state_dict({"lin.weight": a.lin.weight.data})


def test_chunk_per_head_axes(rng):
    """Q/K/V split along rows, OUT along columns."""
    shape = ProjectionShape(8, 8, 2, 4)
    g = rng.standard_normal((8, 8))
    q = chunk_per_head(g, shape, "Q")
    out = chunk_per_head(g, shape, "OUT")
    assert np.array_equal(q[1], g[4:, :])
    assert np.array_equal(out[1], g[:, 4:])
    with pytest.raises(ContractError):
        chunk_per_head(g[:7], shape, "Q")
