"""
Tiny conditional denoiser ``eps(x_t, c, t)``.

4x4 patches of a 32x32x3 image become 64 tokens of width 32. Each transformer
block runs self-attention, cross-attention over the prompt-token embeddings
and a two-layer feed-forward, all pre-norm with residuals. Every attention
projection is addressable as ``(block, "self"|"cross", "Q"|"K"|"V"|"OUT")``.
"""

from dataclasses import asdict, dataclass
from typing import Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from ..autograd import ops
from ..autograd.heads import PROJECTION_KINDS, ProjectionShape
from ..autograd.module import LayerNorm, Linear, Module, ModuleList
from ..autograd.tensor import Parameter, Tensor
from ..errors import ContractError, DimensionError
from ..world.prompts import MAX_PROMPT_LEN, VOCAB_SIZE, PromptTokens
from .features import GenerativeFeatures
from .schedule import make_schedule

ATTENTION_KINDS = ("self", "cross")
MASKED_LOGIT = -1e9


@dataclass(frozen=True)
class DenoiserConfig:
    width: int = 32
    heads: int = 4
    blocks: int = 2
    patch: int = 4
    ff_mult: int = 2
    timesteps: int = 200
    image_size: int = 32
    channels: int = 3
    vocab_size: int = VOCAB_SIZE
    max_prompt: int = MAX_PROMPT_LEN

    @property
    def dim_head(self) -> int:
        return self.width // self.heads

    @property
    def grid(self) -> int:
        return self.image_size // self.patch

    @property
    def patch_dim(self) -> int:
        return self.patch * self.patch * self.channels

    def to_dict(self):
        return asdict(self)


class Attention(Module):
    """Multi-head attention with diffusers-style ``to_q/to_k/to_v/to_out`` projections."""

    def __init__(self, width: int, heads: int, rng: np.random.Generator):
        super().__init__()
        self.heads = heads
        self.dim_head = width // heads
        self.to_q = Linear(width, width, rng, bias=False)
        self.to_k = Linear(width, width, rng, bias=False)
        self.to_v = Linear(width, width, rng, bias=False)
        self.to_out = Linear(width, width, rng)

    def projection(self, kind: str) -> Linear:
        return {"Q": self.to_q, "K": self.to_k, "V": self.to_v, "OUT": self.to_out}[kind]

    def _split(self, t: Tensor) -> Tensor:
        b, n, _ = t.shape
        return t.reshape(b, n, self.heads, self.dim_head).transpose(0, 2, 1, 3)

    def forward(self, x: Tensor, context: Optional[Tensor] = None, key_bias: Optional[np.ndarray] = None):
        ctx = x if context is None else context
        q, k, v = self._split(self.to_q(x)), self._split(self.to_k(ctx)), self._split(self.to_v(ctx))
        scores = ops.scale(ops.matmul(q, k.transpose(0, 1, 3, 2)), 1.0 / np.sqrt(self.dim_head))
        if key_bias is not None:
            scores = ops.add(scores, Tensor(key_bias))
        probs = ops.softmax_lastdim(scores)
        out = ops.matmul(probs, v).transpose(0, 2, 1, 3)
        b, n = out.shape[0], out.shape[1]
        return self.to_out(out.reshape(b, n, self.heads * self.dim_head)), probs.data


class TransformerBlock(Module):
    def __init__(self, config: DenoiserConfig, rng: np.random.Generator):
        super().__init__()
        w = config.width
        self.norm_self = LayerNorm(w)
        self.attn_self = Attention(w, config.heads, rng)
        self.norm_cross = LayerNorm(w)
        self.attn_cross = Attention(w, config.heads, rng)
        self.norm_ff = LayerNorm(w)
        self.ff_in = Linear(w, w * config.ff_mult, rng)
        self.ff_out = Linear(w * config.ff_mult, w, rng)

    def attention(self, kind: str) -> Attention:
        if kind not in ATTENTION_KINDS:
            raise ContractError(f"attention kind must be one of {ATTENTION_KINDS}, got {kind!r}")
        return self.attn_self if kind == "self" else self.attn_cross

    def forward(self, h: Tensor, context: Tensor, key_bias: Optional[np.ndarray]):
        a, _ = self.attn_self(self.norm_self(h))
        h = h + a
        a, cross_probs = self.attn_cross(self.norm_cross(h), context, key_bias)
        h = h + a
        h = h + self.ff_out(ops.gelu(self.ff_in(self.norm_ff(h))))
        return h, cross_probs


def timestep_embedding(t: np.ndarray, dim: int) -> np.ndarray:
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / half)
    args = np.asarray(t, dtype=np.float64)[:, None] * freqs[None, :]
    emb = np.concatenate([np.sin(args), np.cos(args)], axis=1)
    if dim % 2:
        emb = np.concatenate([emb, np.zeros((emb.shape[0], 1))], axis=1)
    return emb


def prompt_ids(prompts, batch: int) -> np.ndarray:
    """Normalize one prompt, a list of prompts or an id array to a (B, L) int array."""
    if isinstance(prompts, PromptTokens):
        ids = np.tile(prompts.array(), (batch, 1))
    elif isinstance(prompts, np.ndarray):
        ids = prompts.astype(np.int64)
    else:
        ids = np.stack([p.array() for p in prompts])
    if ids.shape != (batch, MAX_PROMPT_LEN):
        raise DimensionError("prompt", [ids.shape], f"expected ({batch}, {MAX_PROMPT_LEN})")
    return ids


class TinyDenoiser(Module):
    """
    Predicts the added noise for a batch of (B, 32, 32, 3) model-space images.

    ``key_mask`` optionally holds a (blocks, heads, vocab) boolean table; a
    cross-attention head cannot attend to prompt tokens it marks False.
    """

    def __init__(self, config: DenoiserConfig = DenoiserConfig(), seed: int = 0):
        super().__init__()
        if config.width % config.heads:
            raise ContractError(f"heads ({config.heads}) must divide width ({config.width})")
        rng = np.random.default_rng(seed)
        w = config.width
        self.config = config
        self.schedule = make_schedule(config.timesteps)
        self.trained_with_null_dropout = False
        self.key_mask: Optional[np.ndarray] = None
        self.patch_embed = Linear(config.patch_dim, w, rng)
        self.pos_embed = Parameter(rng.normal(0.0, 0.02, size=(config.grid**2, w)))
        self.time_mlp = Linear(w, w, rng)
        self.token_embed = Parameter(rng.normal(0.0, 1.0, size=(config.vocab_size, w)))
        self.blocks = ModuleList([TransformerBlock(config, rng) for _ in range(config.blocks)])
        self.norm_out = LayerNorm(w)
        self.head = Linear(w, config.patch_dim, rng, std=0.02)

    # Addressing ---------------------------------------------------------------

    def projection(self, block: int, attention: str, kind: str) -> Linear:
        if not 0 <= block < len(self.blocks):
            raise ContractError(f"block {block} outside [0, {len(self.blocks)})")
        if kind not in PROJECTION_KINDS:
            raise ContractError(f"projection kind must be one of {PROJECTION_KINDS}, got {kind!r}")
        return self.blocks[block].attention(attention).projection(kind)

    def projection_shape(self, block: int, attention: str, kind: str) -> ProjectionShape:
        lin = self.projection(block, attention, kind)
        return ProjectionShape(lin.d_out, lin.d_in, self.config.heads, self.config.dim_head)

    def projection_units(self) -> Iterator[Tuple[int, str, str]]:
        """All (block, attention, kind) triples in canonical order."""
        for b in range(len(self.blocks)):
            for a in ATTENTION_KINDS:
                for k in PROJECTION_KINDS:
                    yield b, a, k

    def base_parameters(self) -> List[Parameter]:
        return [p for name, p in self.named_parameters() if ".adapter." not in name]

    # Forward ------------------------------------------------------------------

    def _patchify(self, x: np.ndarray) -> np.ndarray:
        c = self.config
        b = x.shape[0]
        x = x.reshape(b, c.grid, c.patch, c.grid, c.patch, c.channels)
        return x.transpose(0, 1, 3, 2, 4, 5).reshape(b, c.grid**2, c.patch_dim)

    def _unpatchify(self, t: Tensor) -> Tensor:
        c = self.config
        b = t.shape[0]
        t = t.reshape(b, c.grid, c.grid, c.patch, c.patch, c.channels)
        return t.transpose(0, 1, 3, 2, 4, 5).reshape(b, c.image_size, c.image_size, c.channels)

    def _key_bias(self, block: int, ids: np.ndarray) -> Optional[np.ndarray]:
        if self.key_mask is None:
            return None
        allowed = self.key_mask[block][:, ids]  # (H, B, L)
        bias = np.where(allowed, 0.0, MASKED_LOGIT).transpose(1, 0, 2)
        return bias[:, :, None, :]

    def forward(self, x_t: np.ndarray, t, prompts) -> Tuple[Tensor, GenerativeFeatures]:
        c = self.config
        x_t = np.asarray(x_t, dtype=np.float64)
        if x_t.ndim != 4 or x_t.shape[1:] != (c.image_size, c.image_size, c.channels):
            raise DimensionError("denoiser_forward", [x_t.shape], "expected (B, 32, 32, 3)")
        b = x_t.shape[0]
        t = np.broadcast_to(self.schedule.check_timestep(t), (b,))
        ids = prompt_ids(prompts, b)

        h = self.patch_embed(Tensor(self._patchify(x_t))) + self.pos_embed
        temb = ops.gelu(self.time_mlp(Tensor(timestep_embedding(t, c.width))))
        h = h + temb.reshape(b, 1, c.width)
        context = ops.embed_lookup(self.token_embed, ids)

        feature_maps, cross_maps = [], []
        for i, block in enumerate(self.blocks):
            h, probs = block(h, context, self._key_bias(i, ids))
            feature_maps.append(h.data.reshape(b, c.grid, c.grid, c.width).copy())
            cross_maps.append(probs.mean(axis=1).reshape(b, c.grid, c.grid, ids.shape[1]))

        eps = self._unpatchify(self.head(self.norm_out(h)))
        return eps, GenerativeFeatures(feature_maps=feature_maps, cross_attn_maps=cross_maps)


def denoiser_forward(model: TinyDenoiser, x_t, t, prompt: Union[PromptTokens, Sequence[PromptTokens], np.ndarray]):
    """Functional alias of ``model(x_t, t, prompt)``."""
    return model(x_t, t, prompt)
