"""
Stand-alone toy segmenter and the training protocols built on it.

Each pixel sees its 3x3 RGB neighbourhood and its coordinates; a 4x4
average-pooled context branch is upsampled back and concatenated before the
per-pixel decoder.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from tqdm import tqdm

from ..autograd import ops
from ..autograd.module import Linear, Module, upsample_bilinear
from ..autograd.optim import Adam
from ..autograd.tensor import Tensor, no_grad
from ..errors import ContractError, DivergenceError
from ..world.scene import IMAGE_SIZE, NUM_CLASSES, LabeledImage
from .metrics import miou

logger = logging.getLogger(__name__)

POOL = 4


def pixel_features(images: np.ndarray) -> np.ndarray:
    """(B, 32, 32, 29): 3x3 edge-padded neighbourhood (27) plus x/y in [-1, 1]."""
    images = np.asarray(images, dtype=np.float64)
    b, h, w, _ = images.shape
    padded = np.pad(images, ((0, 0), (1, 1), (1, 1), (0, 0)), mode="edge")
    shifts = [padded[:, dy : dy + h, dx : dx + w] for dy in range(3) for dx in range(3)]
    ys, xs = np.meshgrid(np.linspace(-1, 1, h), np.linspace(-1, 1, w), indexing="ij")
    coords = np.broadcast_to(np.stack([xs, ys], axis=-1), (b, h, w, 2))
    return np.concatenate(shifts + [coords], axis=-1)


class ToySegmenter(Module):
    def __init__(self, num_classes: int = NUM_CLASSES, hidden: int = 24, seed: int = 0):
        super().__init__()
        rng = np.random.default_rng(seed)
        self.num_classes = num_classes
        self.encode = Linear(29, hidden, rng)
        self.context = Linear(hidden, hidden, rng)
        self.decode = Linear(2 * hidden, hidden, rng)
        self.classify = Linear(hidden, num_classes, rng)

    def forward(self, images: np.ndarray) -> Tensor:
        x = Tensor(pixel_features(images))
        b = x.shape[0]
        local = ops.gelu(self.encode(x))
        g = IMAGE_SIZE // POOL
        pooled = local.reshape(b, g, POOL, g, POOL, local.shape[-1]).mean(axis=(2, 4))
        ctx = upsample_bilinear(ops.gelu(self.context(pooled)), IMAGE_SIZE)
        h = ops.gelu(self.decode(ops.concat([local, ctx], axis=-1)))
        return self.classify(h)

    def predict(self, images: np.ndarray, batch_size: int = 64) -> np.ndarray:
        images = np.asarray(images)
        out = []
        with no_grad():
            for lo in range(0, len(images), batch_size):
                out.append(np.argmax(self(images[lo : lo + batch_size]).data, axis=-1))
        return np.concatenate(out).astype(np.int64) if out else np.zeros((0, IMAGE_SIZE, IMAGE_SIZE), np.int64)

    def evaluate(self, dataset: Sequence[LabeledImage]) -> float:
        if not dataset:
            raise ContractError("cannot evaluate on an empty set")
        images = np.stack([d.image for d in dataset])
        masks = np.stack([d.mask for d in dataset])
        return miou(self.predict(images), masks, self.num_classes)[0]


@dataclass
class SegmenterTrainResult:
    losses: List[float] = field(default_factory=list)
    real_seen: int = 0
    generated_seen: int = 0

    @property
    def real_fraction(self) -> float:
        total = self.real_seen + self.generated_seen
        return self.real_seen / total if total else 0.0


def _arrays(dataset: Sequence[LabeledImage]) -> Tuple[np.ndarray, np.ndarray]:
    return np.stack([d.image for d in dataset]), np.stack([d.mask for d in dataset])


def train_toy_segmenter(
    real: Sequence[LabeledImage],
    generated: Optional[Sequence[LabeledImage]] = None,
    iterations: int = 300,
    batch_size: int = 8,
    lr: float = 3e-3,
    seed: int = 0,
    mix: bool = False,
    segmenter: Optional[ToySegmenter] = None,
    progress: bool = False,
) -> Tuple[ToySegmenter, SegmenterTrainResult]:
    """
    Cross-entropy training; with ``mix`` every batch is half real, half generated.

    Passing ``segmenter`` continues training it instead of starting fresh.
    """
    if not real:
        raise ContractError("train_toy_segmenter: real set is empty")
    if mix and not generated:
        raise ContractError("real/generated mixing requested without generated data")
    if mix and batch_size % 2:
        raise ContractError(f"mixed batches need an even batch size, got {batch_size}")
    segmenter = segmenter or ToySegmenter(seed=seed)
    real_x, real_y = _arrays(real)
    gen_x, gen_y = _arrays(generated) if mix else (None, None)
    rng = np.random.default_rng(seed)
    opt = Adam(segmenter.parameters(), lr=lr)
    result = SegmenterTrainResult()
    n_real = batch_size // 2 if mix else batch_size
    for it in tqdm(range(iterations), desc="segmenter", disable=not progress):
        idx = rng.integers(0, len(real_x), size=n_real)
        x, y = real_x[idx], real_y[idx]
        if mix:
            gidx = rng.integers(0, len(gen_x), size=batch_size - n_real)
            x, y = np.concatenate([x, gen_x[gidx]]), np.concatenate([y, gen_y[gidx]])
            result.generated_seen += len(gidx)
        result.real_seen += n_real
        opt.zero_grad()
        loss = ops.cross_entropy(segmenter(x), y)
        value = loss.item()
        if not np.isfinite(value):
            raise DivergenceError("segmenter", it, value)
        loss.backward()
        opt.step()
        result.losses.append(value)
    return segmenter, result


def _snapshot(segmenter: ToySegmenter) -> ToySegmenter:
    copy = ToySegmenter(segmenter.num_classes, segmenter.encode.d_out)
    copy.load_state_dict(segmenter.state_dict())
    return copy


def few_shot_protocol(
    source: Sequence[LabeledImage],
    generated: Optional[Sequence[LabeledImage]],
    test: Sequence[LabeledImage],
    iterations: int,
    batch_size: int,
    lr: float,
    seed: int,
) -> Dict[str, float]:
    """
    Baseline on the source pairs, then +1/3 iterations continued two ways:
    real-only ("baseline_ft") and 1:1 real/generated ("mixed").
    """
    extra = max(1, iterations // 3)
    base, _ = train_toy_segmenter(source, iterations=iterations, batch_size=batch_size, lr=lr, seed=seed)
    scores = {"baseline": base.evaluate(test)}
    ft, _ = train_toy_segmenter(source, iterations=extra, batch_size=batch_size, lr=lr, seed=seed + 1,
                                segmenter=_snapshot(base))
    scores["baseline_ft"] = ft.evaluate(test)
    if generated:
        mixed, audit = train_toy_segmenter(source, generated, iterations=extra, batch_size=batch_size, lr=lr,
                                           seed=seed + 1, mix=True, segmenter=_snapshot(base))
        scores["mixed"] = mixed.evaluate(test)
        logger.debug(f"few-shot seed {seed}: real fraction {audit.real_fraction:.3f}")
    return scores


@dataclass
class DomainTable:
    """Per-domain mIoU; ``source`` names the training domain, kept only as a same-domain sanity row."""

    scores: Dict[str, float]
    source: Optional[str] = None

    @property
    def average(self) -> float:
        """Mean over every finite row, source included."""
        return _finite_mean(self.scores.values())

    def shifted_average(self, source: Optional[str] = None) -> float:
        """Mean over the shifted domains only."""
        source = source if source is not None else self.source
        return _finite_mean(v for d, v in self.scores.items() if d != source)

    def to_csv(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        lines = ["domain,miou"] + [f"{d},{v:.6f}" for d, v in self.scores.items()]
        lines.append(f"average,{self.average:.6f}")
        lines.append(f"shifted_average,{self.shifted_average():.6f}")
        path.write_text("\n".join(lines) + "\n")
        return path


def _finite_mean(values) -> float:
    values = [v for v in values if np.isfinite(v)]
    return float(np.mean(values)) if values else float("nan")


def dg_evaluation(
    segmenter: ToySegmenter,
    domains: Dict[str, Sequence[LabeledImage]],
    source: Optional[str] = None,
) -> DomainTable:
    """Per-domain mIoU of one segmenter over rendered test sets."""
    return DomainTable({name: segmenter.evaluate(items) for name, items in domains.items()}, source)
