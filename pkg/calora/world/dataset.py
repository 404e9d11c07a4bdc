"""
Dataset sampling, label statistics and on-disk export.

Export layout per split::

    <dir>/<split>/manifest.json
    <dir>/<split>/arrays.npz          exact float images and int masks
    <dir>/<split>/00000.png           RGB image (lossless)
    <dir>/<split>/00000_mask.png      single-channel class ids
"""

import json
import logging
from pathlib import Path
from typing import List, Sequence

import cv2
import numpy as np

from ..errors import ContractError, MissingArtifactError
from .scene import (
    BUILDING,
    CLASS_NAMES,
    NUM_CLASSES,
    PEDESTRIAN,
    STYLES,
    VEHICLE,
    VIEWPOINTS,
    LabeledImage,
    SceneObject,
    SceneSpec,
    render_scene,
)

logger = logging.getLogger(__name__)


def _objects_for(viewpoint: str, rng: np.random.Generator) -> List[SceneObject]:
    objects = []
    if viewpoint == "driving":
        for _ in range(rng.integers(1, 4)):
            objects.append(SceneObject(BUILDING, rng.uniform(2, 30), rng.uniform(14, 17),
                                       rng.uniform(3, 6), rng.uniform(0.6, 1.0)))
        for cls, k, scale in ((VEHICLE, 3, 6.0), (PEDESTRIAN, 3, 5.0)):
            for _ in range(rng.integers(0, k)):
                depth = rng.uniform(0.0, 0.8)
                objects.append(SceneObject(cls, rng.uniform(3, 29), min(17 + (1 - depth) * 13, 31),
                                           2 + scale * (1 - depth), depth))
    elif viewpoint == "topdown":
        for cls, lo, hi, size in ((BUILDING, 1, 4, (4, 7)), (VEHICLE, 0, 4, (3, 5)), (PEDESTRIAN, 0, 4, (2, 3))):
            for _ in range(rng.integers(lo, hi)):
                objects.append(SceneObject(cls, rng.uniform(4, 28), rng.uniform(4, 28),
                                           rng.uniform(*size), rng.uniform(0.3, 0.6)))
    else:
        main = VEHICLE if rng.random() < 0.5 else PEDESTRIAN
        objects.append(SceneObject(main, rng.uniform(12, 20), rng.uniform(18, 24),
                                   rng.uniform(7, 10), rng.uniform(0.0, 0.2)))
        for _ in range(rng.integers(0, 2)):
            objects.append(SceneObject(PEDESTRIAN, rng.uniform(2, 30), rng.uniform(20, 28),
                                       rng.uniform(2, 3), rng.uniform(0.3, 0.5)))
    return objects


def sample_dataset(style: str, viewpoint: str, n: int, seed: int) -> List[LabeledImage]:
    """``n`` renders with fresh content drawn from ``seed`` at a fixed style and viewpoint."""
    if n < 1:
        raise ContractError(f"n must be >= 1, got {n}")
    if style not in STYLES or viewpoint not in VIEWPOINTS:
        raise ContractError(f"Unknown condition ({style}, {viewpoint})")
    rng = np.random.default_rng(seed)
    items = []
    for _ in range(n):
        scene_seed = int(rng.integers(0, 2**63 - 1))
        objects = tuple(_objects_for(viewpoint, rng))
        items.append(render_scene(SceneSpec(style, viewpoint, objects, scene_seed)))
    return items


def condition_seed(seed: int, *parts: int) -> int:
    """Independent child seed for a (condition, ...) tuple."""
    return int(np.random.SeedSequence([seed, *parts]).generate_state(1, dtype=np.uint64)[0] >> 1)


def sample_corpus(n_per_condition: int, seed: int) -> List[LabeledImage]:
    """Union over every style and viewpoint."""
    corpus = []
    for si, style in enumerate(STYLES):
        for vi, viewpoint in enumerate(VIEWPOINTS):
            corpus += sample_dataset(style, viewpoint, n_per_condition, condition_seed(seed, si, vi))
    logger.info(f"Sampled corpus of {len(corpus)} images over {len(STYLES) * len(VIEWPOINTS)} conditions")
    return corpus


def class_histogram(masks: Sequence[np.ndarray]) -> np.ndarray:
    """Per-class pixel proportions over all masks."""
    if len(masks) == 0:
        raise ContractError("class_histogram needs at least one mask")
    counts = np.zeros(NUM_CLASSES, dtype=np.int64)
    for m in masks:
        counts += np.bincount(np.asarray(m).reshape(-1), minlength=NUM_CLASSES)[:NUM_CLASSES]
    return counts / counts.sum()


# =============================================================================
# Export
# =============================================================================

def export_dataset(items: Sequence[LabeledImage], directory, split: str) -> Path:
    """Write one split; returns the manifest path."""
    out = Path(directory) / split
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, item in enumerate(items):
        name = f"{i:05d}"
        rgb = np.round(item.image * 255.0).astype(np.uint8)
        cv2.imwrite(str(out / f"{name}.png"), cv2.cvtColor(rgb, cv2.COLOR_RGB2BGR))
        cv2.imwrite(str(out / f"{name}_mask.png"), item.mask.astype(np.uint8))
        entries.append({
            "file": f"{name}.png",
            "mask_file": f"{name}_mask.png",
            "style": item.style,
            "viewpoint": item.viewpoint,
            "seed": item.spec.seed if item.spec is not None else None,
            "spec": item.spec.to_dict() if item.spec is not None else None,
            "provenance": item.provenance,
        })
    np.savez(
        out / "arrays.npz",
        images=np.stack([it.image for it in items]) if items else np.zeros((0, 32, 32, 3)),
        masks=np.stack([it.mask for it in items]) if items else np.zeros((0, 32, 32), np.int64),
    )
    manifest = {"split": split, "class_names": list(CLASS_NAMES), "count": len(items), "items": entries}
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2))
    logger.info(f"Exported {len(items)} pairs to {out}")
    return path


def load_dataset(directory, split: str, stage: str = "world") -> List[LabeledImage]:
    """Exact reload of an exported split."""
    out = Path(directory) / split
    manifest_path = out / "manifest.json"
    if not manifest_path.exists():
        raise MissingArtifactError(stage, str(manifest_path))
    manifest = json.loads(manifest_path.read_text())
    with np.load(out / "arrays.npz") as arrays:
        images, masks = arrays["images"], arrays["masks"]
    items = []
    for entry, image, mask in zip(manifest["items"], images, masks):
        spec = SceneSpec.from_dict(entry["spec"]) if entry.get("spec") else None
        items.append(LabeledImage(image=image, mask=mask.astype(np.int64), spec=spec,
                                  provenance=entry.get("provenance")))
    return items
