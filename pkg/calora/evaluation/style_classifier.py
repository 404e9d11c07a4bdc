"""Style classifier used to score prompt adherence of generated images."""

import logging
from dataclasses import dataclass
from typing import Sequence

import cv2
import numpy as np

from ..autograd import ops
from ..autograd.module import Linear, Module
from ..autograd.optim import Adam
from ..autograd.tensor import Tensor, no_grad
from ..errors import ContractError
from ..world.scene import STYLES, LabeledImage

logger = logging.getLogger(__name__)


def style_features(images: np.ndarray) -> np.ndarray:
    """Per-image colour statistics, brightness quantiles, edge energy and speckle rate."""
    images = np.asarray(images, dtype=np.float64)
    feats = []
    for img in images:
        gray = img.mean(axis=-1)
        gx = cv2.Sobel(gray, cv2.CV_64F, 1, 0, ksize=3)
        gy = cv2.Sobel(gray, cv2.CV_64F, 0, 1, ksize=3)
        feats.append(np.concatenate([
            img.mean(axis=(0, 1)),
            img.std(axis=(0, 1)),
            np.quantile(gray, [0.1, 0.5, 0.9]),
            [np.sqrt(gx**2 + gy**2).mean(), (gray > 0.95).mean(), img[..., 2].mean() - img[..., 0].mean()],
        ]))
    return np.array(feats)


class ToyStyleClassifier(Module):
    """Softmax regression over :func:`style_features`."""

    def __init__(self, seed: int = 0):
        super().__init__()
        self.linear = Linear(12, len(STYLES), np.random.default_rng(seed))
        self.fitted = False
        self.mean = np.zeros(12)
        self.std = np.ones(12)

    def forward(self, images: np.ndarray) -> Tensor:
        return self.linear(Tensor((style_features(images) - self.mean) / self.std))

    def log_proba(self, images: np.ndarray) -> np.ndarray:
        if not self.fitted:
            raise ContractError("style classifier has not been trained")
        with no_grad():
            logits = self(images).data
        shifted = logits - logits.max(axis=1, keepdims=True)
        return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))

    def predict(self, images: np.ndarray) -> np.ndarray:
        return np.argmax(self.log_proba(images), axis=1)


def train_style_classifier(
    corpus: Sequence[LabeledImage],
    iterations: int = 300,
    lr: float = 0.05,
    seed: int = 0,
) -> ToyStyleClassifier:
    """Full-batch Adam on style labels of a rendered corpus."""
    if not corpus:
        raise ContractError("train_style_classifier: corpus is empty")
    images = np.stack([d.image for d in corpus])
    labels = np.array([STYLES.index(d.style) for d in corpus])
    clf = ToyStyleClassifier(seed)
    feats = style_features(images)
    clf.mean = feats.mean(axis=0)
    clf.std = feats.std(axis=0) + 1e-6
    x = Tensor((feats - clf.mean) / clf.std)
    opt = Adam(clf.parameters(), lr=lr)
    for _ in range(iterations):
        opt.zero_grad()
        loss = ops.cross_entropy(clf.linear(x), labels)
        loss.backward()
        opt.step()
    clf.fitted = True
    logger.info(f"Style classifier: final loss {loss.item():.4f} on {len(corpus)} images")
    return clf


@dataclass
class AdherenceResult:
    accuracy: float
    mean_log_prob: float
    n: int

    def to_dict(self):
        return {"accuracy": self.accuracy, "mean_log_prob": self.mean_log_prob, "n": self.n}


def prompt_adherence(gen_images: np.ndarray, intended_style: str, classifier: ToyStyleClassifier) -> AdherenceResult:
    """Fraction of images classified as ``intended_style`` and their mean log-probability of it."""
    if intended_style not in STYLES:
        raise ContractError(f"unknown style {intended_style!r}")
    if len(gen_images) == 0:
        raise ContractError("prompt_adherence needs at least one image")
    log_p = classifier.log_proba(gen_images)
    k = STYLES.index(intended_style)
    return AdherenceResult(
        accuracy=float(np.mean(np.argmax(log_p, axis=1) == k)),
        mean_log_prob=float(log_p[:, k].mean()),
        n=int(len(gen_images)),
    )
