"""Domain types and box geometry shared by the whole pipeline.

Pixel boxes use continuous coordinates with the origin at the top-left
corner and y pointing down. An image of size W x H spans [0, W) x [0, H),
so a quadrant cut at x = W/2 never shares a column between two tiles.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

# Boundary slack for normalized boxes; absorbs 6-decimal label quantization.
EPS = 1e-6
MAX_PLATE_ID = 16


class BoxError(ValueError):
    """Raised for boxes that violate geometric invariants."""


class QuadrantTag(str, enum.Enum):
    TL = "TL"
    TR = "TR"
    BL = "BL"
    BR = "BR"


@dataclass(frozen=True, slots=True)
class PlateRecord:
    """One well of one plate: the unit used for cross-validation splits."""

    plate_id: int
    well: str
    class_label: str
    bf_path: str
    gfp_path: str

    def __post_init__(self):
        if not 1 <= self.plate_id <= MAX_PLATE_ID:
            raise ValueError(f"plate_id {self.plate_id} outside 1..{MAX_PLATE_ID}")
        if not self.well:
            raise ValueError("well must be nonempty")
        if not self.class_label:
            raise ValueError("class_label must be nonempty")
        if not self.bf_path or not self.gfp_path:
            raise ValueError("bf_path and gfp_path must be nonempty")

    @property
    def key(self) -> tuple[int, str]:
        return (self.plate_id, self.well)


@dataclass(frozen=True)
class ClassSet:
    """Ordered class names; a class id is the zero-based position in ``names``."""

    names: tuple[str, ...]

    def __post_init__(self):
        names = tuple(self.names)
        object.__setattr__(self, "names", names)
        if not names:
            raise ValueError("ClassSet must contain at least one class")
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate class names in {names!r}")
        if any(not n or "\n" in n for n in names):
            raise ValueError("class names must be nonempty single-line strings")

    def __len__(self) -> int:
        return len(self.names)

    def __iter__(self):
        return iter(self.names)

    def __contains__(self, name) -> bool:
        return name in self.names

    def id_of(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise KeyError(f"unknown class {name!r}; known: {list(self.names)}") from None

    def name_of(self, class_id: int) -> str:
        return self.names[class_id]

    def to_text(self) -> str:
        """Serialize as a darknet names file: one class per line."""
        return "".join(f"{n}\n" for n in self.names)

    @classmethod
    def from_text(cls, text: str) -> "ClassSet":
        return cls(tuple(line.strip() for line in text.splitlines() if line.strip()))


@dataclass(frozen=True, slots=True)
class BBoxPx:
    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise BoxError(f"degenerate pixel box {self.as_tuple()}")

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x_min, self.y_min, self.x_max, self.y_max)

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    @property
    def area(self) -> float:
        return self.width * self.height

    def translate(self, dx: float, dy: float) -> "BBoxPx":
        return BBoxPx(self.x_min + dx, self.y_min + dy, self.x_max + dx, self.y_max + dy)

    def clamp(self, width: float, height: float) -> "BBoxPx":
        return BBoxPx(
            min(max(self.x_min, 0.0), width),
            min(max(self.y_min, 0.0), height),
            min(max(self.x_max, 0.0), width),
            min(max(self.y_max, 0.0), height),
        )


@dataclass(frozen=True, slots=True)
class NormBBox:
    """Darknet box encoding: center and size as fractions of the image."""

    cx: float
    cy: float
    w: float
    h: float

    def __post_init__(self):
        if not (0.0 < self.w <= 1.0 + EPS and 0.0 < self.h <= 1.0 + EPS):
            raise BoxError(f"normalized box size out of (0, 1]: w={self.w}, h={self.h}")
        if self.cx - self.w / 2 < -EPS or self.cx + self.w / 2 > 1.0 + EPS:
            raise BoxError(f"normalized box exceeds x range: cx={self.cx}, w={self.w}")
        if self.cy - self.h / 2 < -EPS or self.cy + self.h / 2 > 1.0 + EPS:
            raise BoxError(f"normalized box exceeds y range: cy={self.cy}, h={self.h}")

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.cx, self.cy, self.w, self.h)

    def corners(self) -> tuple[float, float, float, float]:
        return (
            self.cx - self.w / 2,
            self.cy - self.h / 2,
            self.cx + self.w / 2,
            self.cy + self.h / 2,
        )


@dataclass(frozen=True, slots=True)
class Annotation:
    class_id: int
    box: NormBBox

    def __post_init__(self):
        if self.class_id < 0:
            raise ValueError(f"negative class id {self.class_id}")


@dataclass(frozen=True, slots=True)
class Detection:
    class_id: int
    box: NormBBox
    confidence: float

    def __post_init__(self):
        if self.class_id < 0:
            raise ValueError(f"negative class id {self.class_id}")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence {self.confidence} outside [0, 1]")


@dataclass(frozen=True, slots=True)
class ImageMeta:
    width: int
    height: int
    plate_id: Optional[int] = None
    well: Optional[str] = None
    tile: Optional[QuadrantTag] = None

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ValueError(f"image size must be positive, got {self.width}x{self.height}")


def check_class_ids(items: Iterable, class_set: ClassSet) -> None:
    """Raise if any annotation/detection refers to a class outside ``class_set``."""
    n = len(class_set)
    for i, item in enumerate(items):
        if item.class_id >= n:
            raise ValueError(f"item {i}: class id {item.class_id} >= class count {n}")


def to_norm(box: BBoxPx, meta: ImageMeta) -> NormBBox:
    """Convert a pixel box to the center/size encoding relative to ``meta``."""
    W, H = meta.width, meta.height
    tol_x, tol_y = EPS * W, EPS * H
    for name, value, limit, tol in (
        ("x_min", box.x_min, W, tol_x),
        ("x_max", box.x_max, W, tol_x),
        ("y_min", box.y_min, H, tol_y),
        ("y_max", box.y_max, H, tol_y),
    ):
        if value < -tol or value > limit + tol:
            raise BoxError(f"{name}={value} outside image bounds [0, {limit}]")
    return NormBBox(
        cx=(box.x_min + box.x_max) / (2 * W),
        cy=(box.y_min + box.y_max) / (2 * H),
        w=(box.x_max - box.x_min) / W,
        h=(box.y_max - box.y_min) / H,
    )


def to_px(box: NormBBox, meta: ImageMeta) -> BBoxPx:
    """Inverse of :func:`to_norm`, clamped to the image bounds."""
    W, H = meta.width, meta.height
    x0 = (box.cx - box.w / 2) * W
    x1 = (box.cx + box.w / 2) * W
    y0 = (box.cy - box.h / 2) * H
    y1 = (box.cy + box.h / 2) * H
    return BBoxPx(max(x0, 0.0), max(y0, 0.0), min(x1, float(W)), min(y1, float(H)))


def iou(a: BBoxPx | NormBBox, b: BBoxPx | NormBBox) -> float:
    """Intersection over union of two axis-aligned boxes.

    Accepts pixel or normalized boxes (both sides the same kind). IoU is
    invariant under per-axis scaling, so normalized boxes of the same image
    give the pixel-space value.
    """
    ax0, ay0, ax1, ay1 = a.corners() if isinstance(a, NormBBox) else a.as_tuple()
    bx0, by0, bx1, by1 = b.corners() if isinstance(b, NormBBox) else b.as_tuple()
    iw = min(ax1, bx1) - max(ax0, bx0)
    ih = min(ay1, by1) - max(ay0, by0)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = (ax1 - ax0) * (ay1 - ay0) + (bx1 - bx0) * (by1 - by0) - inter
    return min(1.0, inter / union)


def corners_array(boxes: Sequence[NormBBox]):
    """(N, 4) float array of (x0, y0, x1, y1) corners for vectorized IoU."""
    if not boxes:
        return np.zeros((0, 4))
    arr = np.array([b.as_tuple() for b in boxes], dtype=float)
    half_w, half_h = arr[:, 2] / 2, arr[:, 3] / 2
    return np.stack(
        [arr[:, 0] - half_w, arr[:, 1] - half_h, arr[:, 0] + half_w, arr[:, 1] + half_h],
        axis=1,
    )


def iou_matrix(a, b):
    """Pairwise IoU between two (N, 4) / (M, 4) corner arrays."""
    if len(a) == 0 or len(b) == 0:
        return np.zeros((len(a), len(b)))
    iw = np.minimum(a[:, None, 2], b[None, :, 2]) - np.maximum(a[:, None, 0], b[None, :, 0])
    ih = np.minimum(a[:, None, 3], b[None, :, 3]) - np.maximum(a[:, None, 1], b[None, :, 1])
    inter = np.clip(iw, 0, None) * np.clip(ih, 0, None)
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    union = area_a[:, None] + area_b[None, :] - inter
    return np.minimum(1.0, inter / union)
