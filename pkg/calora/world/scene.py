"""
Procedural scene description and renderer.

Geometry (the class mask) is rasterized first from the viewpoint layout and
the object list; style is applied afterwards as a pixel-only transform, so
every style of one SceneSpec shares the exact same mask.
"""

from dataclasses import asdict, dataclass, field, replace
from typing import Any, Dict, Optional, Tuple

import cv2
import numpy as np

from ..errors import ContractError

IMAGE_SIZE = 32
CLASS_NAMES = ("sky", "road", "building", "vehicle", "pedestrian")
NUM_CLASSES = len(CLASS_NAMES)
SKY, ROAD, BUILDING, VEHICLE, PEDESTRIAN = range(NUM_CLASSES)
OBJECT_CLASSES = (BUILDING, VEHICLE, PEDESTRIAN)

STYLES = ("clearday", "foggy", "night", "snowy", "sketch")
VIEWPOINTS = ("driving", "topdown", "closeup")

HORIZON = IMAGE_SIZE // 2


def class_id(name: str) -> int:
    if name not in CLASS_NAMES:
        raise ContractError(f"Unknown class name: {name!r}")
    return CLASS_NAMES.index(name)


@dataclass(frozen=True)
class SceneObject:
    class_id: int
    x: float
    y: float
    size: float
    depth: float


@dataclass(frozen=True)
class SceneSpec:
    style: str
    viewpoint: str
    objects: Tuple[SceneObject, ...]
    seed: int

    def __post_init__(self):
        if self.style not in STYLES:
            raise ContractError(f"Unknown style: {self.style!r}")
        if self.viewpoint not in VIEWPOINTS:
            raise ContractError(f"Unknown viewpoint: {self.viewpoint!r}")
        for obj in self.objects:
            if obj.class_id not in OBJECT_CLASSES:
                raise ContractError(f"Object class must be building/vehicle/pedestrian, got {obj.class_id}")
            if not (0 <= obj.x < IMAGE_SIZE and 0 <= obj.y < IMAGE_SIZE):
                raise ContractError(f"Object position ({obj.x}, {obj.y}) outside the image")
            if not 0.0 <= obj.depth <= 1.0:
                raise ContractError(f"Object depth {obj.depth} outside [0, 1]")
            if obj.size <= 0:
                raise ContractError(f"Object size must be positive, got {obj.size}")

    def with_style(self, style: str) -> "SceneSpec":
        return replace(self, style=style)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "style": self.style,
            "viewpoint": self.viewpoint,
            "objects": [asdict(o) for o in self.objects],
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "SceneSpec":
        return cls(
            style=data["style"],
            viewpoint=data["viewpoint"],
            objects=tuple(SceneObject(**o) for o in data["objects"]),
            seed=int(data["seed"]),
        )


@dataclass
class LabeledImage:
    """Image in [0, 1] with its exact class mask; ``spec`` is None for generated pairs."""

    image: np.ndarray
    mask: np.ndarray
    spec: Optional[SceneSpec] = None
    provenance: Optional[Dict[str, Any]] = field(default=None)

    def __post_init__(self):
        if self.image.shape != (IMAGE_SIZE, IMAGE_SIZE, 3):
            raise ContractError(f"image must be {IMAGE_SIZE}x{IMAGE_SIZE}x3, got {self.image.shape}")
        if self.mask.shape != self.image.shape[:2]:
            raise ContractError(f"mask {self.mask.shape} does not match image {self.image.shape}")
        if self.mask.min() < 0 or self.mask.max() >= NUM_CLASSES:
            raise ContractError("mask holds invalid class ids")

    @property
    def style(self) -> Optional[str]:
        if self.spec is not None:
            return self.spec.style
        return (self.provenance or {}).get("style")

    @property
    def viewpoint(self) -> Optional[str]:
        if self.spec is not None:
            return self.spec.viewpoint
        return (self.provenance or {}).get("viewpoint")


# =============================================================================
# Geometry
# =============================================================================

_ROWS = np.arange(IMAGE_SIZE)[:, None] * np.ones((1, IMAGE_SIZE))


def _background(viewpoint: str) -> Tuple[np.ndarray, np.ndarray]:
    """Class mask and per-pixel depth of the empty scene."""
    mask = np.full((IMAGE_SIZE, IMAGE_SIZE), ROAD, dtype=np.int64)
    depth = np.full((IMAGE_SIZE, IMAGE_SIZE), 0.5)
    if viewpoint == "driving":
        sky = _ROWS < HORIZON
        mask[sky] = SKY
        depth = np.where(sky, 1.0, 1.0 - (_ROWS - HORIZON) / HORIZON)
    elif viewpoint == "closeup":
        mask[_ROWS < 10] = SKY
        mask[(_ROWS >= 10) & (_ROWS < 26)] = BUILDING
        depth = np.where(_ROWS < 10, 1.0, np.where(_ROWS < 26, 0.6, 0.3))
    return mask, depth


def _pt(x: float, y: float) -> Tuple[int, int]:
    return int(round(x)), int(round(y))


def _footprint(obj: SceneObject, viewpoint: str) -> np.ndarray:
    canvas = np.zeros((IMAGE_SIZE, IMAGE_SIZE), dtype=np.uint8)
    s = obj.size * (1.5 if viewpoint == "closeup" else 1.0)
    x, y = obj.x, obj.y
    if viewpoint == "topdown":
        if obj.class_id == BUILDING:
            h = s * 0.8
            cv2.rectangle(canvas, _pt(x - h, y - h), _pt(x + h, y + h), 1, -1)
        elif obj.class_id == VEHICLE:
            cv2.rectangle(canvas, _pt(x - s * 0.3, y - s * 0.55), _pt(x + s * 0.3, y + s * 0.55), 1, -1)
        else:
            cv2.circle(canvas, _pt(x, y), max(1, int(round(s * 0.3))), 1, -1)
        return canvas.astype(bool)

    if obj.class_id == BUILDING:
        cv2.rectangle(canvas, _pt(x - s * 0.7, y - s * 2.2), _pt(x + s * 0.7, y), 1, -1)
    elif obj.class_id == VEHICLE:
        cv2.rectangle(canvas, _pt(x - s * 0.8, y - s * 0.4), _pt(x + s * 0.8, y + s * 0.4), 1, -1)
        cv2.rectangle(canvas, _pt(x - s * 0.45, y - s * 0.75), _pt(x + s * 0.45, y - s * 0.4), 1, -1)
    else:
        half_w = max(0.5, s * 0.18)
        cv2.rectangle(canvas, _pt(x - half_w, y - s * 0.55), _pt(x + half_w, y + s * 0.55), 1, -1)
        cv2.circle(canvas, _pt(x, y - s * 0.75), max(1, int(round(s * 0.2))), 1, -1)
    return canvas.astype(bool)


# =============================================================================
# Pixels
# =============================================================================

_PALETTE = {
    BUILDING: np.array([[0.55, 0.42, 0.32], [0.72, 0.66, 0.55], [0.50, 0.50, 0.52]]),
    VEHICLE: np.array([[0.80, 0.12, 0.10], [0.15, 0.25, 0.75], [0.90, 0.80, 0.15], [0.92, 0.92, 0.90]]),
    PEDESTRIAN: np.array([[0.20, 0.55, 0.25], [0.45, 0.15, 0.50], [0.95, 0.50, 0.10]]),
}


def _background_pixels(mask: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    image = np.zeros((IMAGE_SIZE, IMAGE_SIZE, 3))
    t = (_ROWS / IMAGE_SIZE)[..., None]
    sky = np.array([0.40, 0.62, 0.95]) * (1 - t) + np.array([0.78, 0.86, 0.98]) * t
    road = 0.33 + 0.04 * rng.standard_normal((IMAGE_SIZE, IMAGE_SIZE, 1))
    facade = np.array([0.62, 0.55, 0.48]) + 0.03 * rng.standard_normal((IMAGE_SIZE, IMAGE_SIZE, 3))
    image = np.where((mask == SKY)[..., None], sky, image)
    image = np.where((mask == ROAD)[..., None], np.repeat(road, 3, axis=2), image)
    image = np.where((mask == BUILDING)[..., None], facade, image)
    lane = (mask == ROAD) & (np.abs(np.arange(IMAGE_SIZE)[None, :] - 15.5) < 1) & ((_ROWS // 3) % 2 == 0)
    image[lane] = 0.9
    return image


def _paint_object(image: np.ndarray, foot: np.ndarray, class_id: int, rng: np.random.Generator) -> None:
    palette = _PALETTE[class_id]
    color = palette[rng.integers(len(palette))] + rng.uniform(-0.05, 0.05, size=3)
    rows, cols = np.nonzero(foot)
    shade = np.ones(rows.size)
    if class_id == BUILDING:
        shade[(rows % 4 == 1) & (cols % 3 == 1)] = 1.35
    elif class_id == VEHICLE and rows.size:
        shade[rows == rows.max()] = 0.3
    image[rows, cols] = np.clip(color[None, :] * shade[:, None], 0.0, 1.0)


def apply_style(image: np.ndarray, depth: np.ndarray, style: str, seed: int) -> np.ndarray:
    """Pixel-only style transform."""
    if style == "clearday":
        out = image.copy()
    elif style == "foggy":
        f = (0.25 + 0.6 * depth)[..., None]
        out = image * (1.0 - f) + 0.82 * f
    elif style == "night":
        out = image * 0.22 + np.array([0.0, 0.02, 0.08])
    elif style == "snowy":
        rng = np.random.default_rng([seed, 1])
        out = 0.75 * image + 0.25 * 0.92
        out[rng.random(depth.shape) < 0.06] = 0.97
    elif style == "sketch":
        gray = image.mean(axis=2)
        gx = cv2.Sobel(gray, cv2.CV_64F, 1, 0, ksize=3)
        gy = cv2.Sobel(gray, cv2.CV_64F, 0, 1, ksize=3)
        mag = np.hypot(gx, gy)
        edges = np.clip(2.0 * mag / max(mag.max(), 1e-12), 0.0, 1.0)
        out = np.repeat((1.0 - edges)[..., None], 3, axis=2)
    else:
        raise ContractError(f"Unknown style: {style!r}")
    return np.clip(out, 0.0, 1.0)


def render_scene(spec: SceneSpec) -> LabeledImage:
    """Render a scene; deterministic in ``spec``."""
    rng = np.random.default_rng(spec.seed)
    mask, depth = _background(spec.viewpoint)
    image = _background_pixels(mask, rng)
    # Far objects first; nearer ones overwrite.
    for obj in sorted(spec.objects, key=lambda o: -o.depth):
        foot = _footprint(obj, spec.viewpoint)
        mask[foot] = obj.class_id
        depth[foot] = obj.depth
        _paint_object(image, foot, obj.class_id, rng)
    image = apply_style(image, depth, spec.style, spec.seed)
    return LabeledImage(image=image, mask=mask, spec=spec)
