"""Turn instance masks from an external segmenter into weakly labelled boxes.

Every instance in a mask becomes one cell box; the class is inherited from
the plate-level label, not assigned per cell.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .core import Annotation, BBoxPx, ImageMeta, to_norm

DEFAULT_MARGIN_FRAC = 0.02
DEFAULT_MIN_AREA_PX = 9
DEFAULT_MAX_AREA_FRAC = 0.25


@dataclass(frozen=True, slots=True)
class CellBox:
    instance_id: int
    box: BBoxPx
    area_px: int


@dataclass
class ImportStats:
    instances: int = 0
    kept: int = 0
    dropped: Counter = field(default_factory=Counter)

    def as_dict(self) -> dict:
        return {
            "instances": self.instances,
            "kept": self.kept,
            "dropped_too_small": self.dropped["too_small"],
            "dropped_too_large": self.dropped["too_large"],
        }


def instances_to_boxes(mask: np.ndarray) -> list[CellBox]:
    """One tight box per distinct nonzero label, sorted by label value.

    Pixels sharing a label form one instance even if they are not connected.
    """
    if mask.ndim != 2:
        raise ValueError(f"instance mask must be 2-D, got shape {mask.shape}")
    if mask.size and mask.min() < 0:
        raise ValueError("instance mask contains negative labels")
    labels = np.unique(mask)
    labels = labels[labels > 0]
    if labels.size == 0:
        return []
    # Relabel to 1..n so find_objects does not allocate up to max(label).
    dense = np.searchsorted(labels, mask).astype(np.int64) + 1
    dense[mask == 0] = 0
    slices = ndimage.find_objects(dense)
    areas = np.bincount(dense.ravel(), minlength=labels.size + 1)
    out = []
    for i, (label, sl) in enumerate(zip(labels, slices), start=1):
        ys, xs = sl
        out.append(
            CellBox(
                instance_id=int(label),
                box=BBoxPx(float(xs.start), float(ys.start), float(xs.stop), float(ys.stop)),
                area_px=int(areas[i]),
            )
        )
    return out


def expand_box(box: BBoxPx, margin_frac: float, bounds: ImageMeta) -> BBoxPx:
    """Grow width and height by ``margin_frac`` (half per side), then clamp."""
    if margin_frac < 0:
        raise ValueError(f"margin_frac must be >= 0, got {margin_frac}")
    dx = box.width * margin_frac / 2
    dy = box.height * margin_frac / 2
    grown = BBoxPx(box.x_min - dx, box.y_min - dy, box.x_max + dx, box.y_max + dy)
    return grown.clamp(bounds.width, bounds.height)


def filter_boxes(
    boxes: list[CellBox],
    min_area_px: int,
    max_area_frac: float,
    image_area: float,
) -> tuple[list[CellBox], Counter]:
    """Drop segmentation debris and implausibly large regions.

    Returns the kept boxes and a Counter of drop reasons (``too_small``,
    ``too_large``). A box failing both tests counts as ``too_small``.
    """
    if min_area_px < 0 or max_area_frac < 0:
        raise ValueError("filter thresholds must be >= 0")
    kept, dropped = [], Counter()
    limit = max_area_frac * image_area
    for cb in boxes:
        if cb.area_px < min_area_px:
            dropped["too_small"] += 1
        elif cb.box.area > limit:
            dropped["too_large"] += 1
        else:
            kept.append(cb)
    return kept, dropped


def boxes_to_annotations(boxes: list[CellBox], class_id: int, meta: ImageMeta) -> list[Annotation]:
    return [Annotation(class_id, to_norm(cb.box, meta)) for cb in boxes]


def mask_to_annotations(
    mask: np.ndarray,
    class_id: int,
    meta: ImageMeta,
    margin_frac: float = DEFAULT_MARGIN_FRAC,
    min_area_px: int = DEFAULT_MIN_AREA_PX,
    max_area_frac: float = DEFAULT_MAX_AREA_FRAC,
) -> tuple[list[Annotation], ImportStats]:
    """Full import chain: boxes -> filter (on tight boxes) -> expand -> normalize."""
    if mask.shape != (meta.height, meta.width):
        raise ValueError(
            f"mask size {mask.shape[1]}x{mask.shape[0]} does not match image {meta.width}x{meta.height}"
        )
    cells = instances_to_boxes(mask)
    kept, dropped = filter_boxes(cells, min_area_px, max_area_frac, meta.width * meta.height)
    expanded = [
        CellBox(cb.instance_id, expand_box(cb.box, margin_frac, meta), cb.area_px) for cb in kept
    ]
    stats = ImportStats(instances=len(cells), kept=len(kept), dropped=dropped)
    return boxes_to_annotations(expanded, class_id, meta), stats
