"""
Lightweight label generator over the denoiser's generative features.

Block feature maps are projected to a shared width and summed with a
projection of per-class cross-attention maps; a small head turns the fused
8x8 grid into K class logits, upsampled bilinearly to 32x32.
"""

import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from tqdm import tqdm

from ..autograd import ops
from ..autograd.module import LayerNorm, Linear, Module, ModuleList, upsample_bilinear
from ..autograd.optim import Adam
from ..autograd.tensor import Tensor, no_grad
from ..binfmt import read_container, write_container
from ..diffusion.denoiser import DenoiserConfig, TinyDenoiser, prompt_ids
from ..diffusion.extract import extract_features_batch
from ..diffusion.features import GenerativeFeatures
from ..errors import ContractError, DivergenceError
from ..world.dataset import condition_seed
from ..world.prompts import PromptTokens, class_token, prompt_for_image
from ..world.scene import IMAGE_SIZE, NUM_CLASSES, LabeledImage

logger = logging.getLogger(__name__)

LABELGEN_MAGIC = b"CALRLGEN"


def class_attention_maps(features: GenerativeFeatures, ids: np.ndarray, num_classes: int = NUM_CLASSES) -> np.ndarray:
    """
    Cross-attention mass on each class token, per block: (B, 8, 8, blocks * K).

    A class absent from the prompt gets an all-zero map.
    """
    onehot = np.zeros(ids.shape + (num_classes,))
    for k in range(num_classes):
        onehot[..., k] = ids == class_token(k)
    # (B, H, W, L) x (B, L, K) -> (B, H, W, K) per block
    per_block = [np.einsum("bhwl,blk->bhwk", a, onehot) for a in features.cross_attn_maps]
    return np.concatenate(per_block, axis=-1)


class LabelGenerator(Module):
    def __init__(self, config: DenoiserConfig, num_classes: int = NUM_CLASSES, hidden: int = 32, seed: int = 0):
        super().__init__()
        rng = np.random.default_rng(seed)
        self.config = config
        self.num_classes = num_classes
        self.hidden = hidden
        self.feature_proj = ModuleList([Linear(config.width, hidden, rng) for _ in range(config.blocks)])
        self.attn_proj = Linear(config.blocks * num_classes, hidden, rng)
        self.norm = LayerNorm(hidden)
        self.fuse = Linear(hidden, hidden, rng)
        self.classify = Linear(hidden, num_classes, rng)

    def forward(self, features: GenerativeFeatures, prompts) -> Tensor:
        """Logits (B, 32, 32, K)."""
        if len(features.feature_maps) != len(self.feature_proj):
            raise ContractError(
                f"expected features from {len(self.feature_proj)} blocks, got {len(features.feature_maps)}"
            )
        ids = prompt_ids(prompts, features.batch_size)
        h = self.attn_proj(Tensor(class_attention_maps(features, ids, self.num_classes)))
        for proj, fmap in zip(self.feature_proj, features.feature_maps):
            h = h + proj(Tensor(fmap))
        h = ops.gelu(self.norm(h))
        h = ops.gelu(self.fuse(h))
        return upsample_bilinear(self.classify(h), IMAGE_SIZE)

    def predict(self, features: GenerativeFeatures, prompts) -> np.ndarray:
        with no_grad():
            return np.argmax(self(features, prompts).data, axis=-1).astype(np.int64)


# =============================================================================
# Training
# =============================================================================


def build_feature_bank(
    model: TinyDenoiser,
    dataset: Sequence[LabeledImage],
    t_feat: int,
    views: int,
    seed: int,
    batch_size: int = 64,
) -> Tuple[List[GenerativeFeatures], np.ndarray]:
    """``views`` independently noised feature passes over every image, plus prompt ids."""
    prompts = [prompt_for_image(item) for item in dataset]
    images = np.stack([item.image for item in dataset])
    bank = []
    for v in range(views):
        parts = []
        for lo in range(0, len(images), batch_size):
            seeds = [condition_seed(seed, v, i) for i in range(lo, min(lo + batch_size, len(images)))]
            parts.append(extract_features_batch(model, images[lo : lo + batch_size], t_feat,
                                                prompts[lo : lo + batch_size], seeds))
        bank.append(GenerativeFeatures.concat(parts))
    return bank, prompt_ids(prompts, len(prompts))


def _take(features: GenerativeFeatures, idx: np.ndarray) -> GenerativeFeatures:
    return GenerativeFeatures(
        feature_maps=[f[idx] for f in features.feature_maps],
        cross_attn_maps=[a[idx] for a in features.cross_attn_maps],
    )


def train_label_generator(
    model: TinyDenoiser,
    dataset: Sequence[LabeledImage],
    config,
    seed: int,
    progress: bool = False,
) -> Tuple[LabelGenerator, List[float]]:
    """
    Fit a label generator on features of noised real images.

    ``config`` carries iterations, t_feat, lr, batch_size, feature_views and
    hidden (see ``calora.config.LabelGenConfig``). The denoiser only runs
    under ``no_grad``, so its parameters are never touched.
    """
    if not dataset:
        raise ContractError("train_label_generator: dataset is empty")
    bank, ids = build_feature_bank(model, dataset, config.t_feat, config.feature_views, seed)
    masks = np.stack([item.mask for item in dataset])
    generator = LabelGenerator(model.config, hidden=config.hidden, seed=seed)
    opt = Adam(generator.parameters(), lr=config.lr)
    rng = np.random.default_rng(condition_seed(seed, 99))
    losses: List[float] = []
    logger.info(
        f"labelgen: {config.iterations} iterations on {len(dataset)} images x {config.feature_views} views"
    )
    for it in tqdm(range(config.iterations), desc="labelgen", disable=not progress):
        idx = rng.integers(0, len(dataset), size=config.batch_size)
        view = bank[int(rng.integers(0, len(bank)))]
        opt.zero_grad()
        loss = ops.cross_entropy(generator(_take(view, idx), ids[idx]), masks[idx])
        value = loss.item()
        if not np.isfinite(value):
            raise DivergenceError("labelgen", it, value)
        loss.backward()
        opt.step()
        losses.append(value)
        if it % 100 == 0:
            logger.debug(f"labelgen iteration {it}: loss {value:.5f}")
    if losses:
        logger.info(f"labelgen: loss {losses[0]:.4f} -> {losses[-1]:.4f}")
    return generator, losses


# =============================================================================
# Inference
# =============================================================================


def predict_labels(
    model: TinyDenoiser,
    generator: LabelGenerator,
    images: np.ndarray,
    t_feat: int,
    eps_seeds: Sequence[int],
    prompts: Sequence[PromptTokens],
) -> np.ndarray:
    features = extract_features_batch(model, images, t_feat, prompts, eps_seeds)
    return generator.predict(features, list(prompts))


def predict_label(
    model: TinyDenoiser,
    generator: LabelGenerator,
    image: np.ndarray,
    t_feat: int,
    eps_seed: int,
    prompt: PromptTokens,
) -> np.ndarray:
    """Argmax class per pixel, (32, 32) ints in [0, K)."""
    return predict_labels(model, generator, np.asarray(image)[None], t_feat, [eps_seed], [prompt])[0]


def save_label_generator(generator: LabelGenerator, path, meta: Optional[Dict[str, Any]] = None) -> Path:
    header = {
        "kind": "label-generator",
        "config": generator.config.to_dict(),
        "num_classes": generator.num_classes,
        "hidden": generator.hidden,
        "meta": meta or {},
    }
    write_container(path, LABELGEN_MAGIC, header, generator.state_dict())
    return Path(path)


def load_label_generator(path) -> Tuple[LabelGenerator, Dict[str, Any]]:
    header, arrays = read_container(path, LABELGEN_MAGIC)
    generator = LabelGenerator(DenoiserConfig(**header["config"]), header["num_classes"], header["hidden"])
    generator.load_state_dict(arrays)
    return generator, header.get("meta", {})
