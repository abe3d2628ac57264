"""Yeast-cell microscopy pipeline: composites, mask import, quadrant tiling,
darknet dataset generation and detection/classification evaluation."""

__version__ = "0.1.0"

from .core import (  # noqa: F401
    Annotation,
    BBoxPx,
    ClassSet,
    Detection,
    ImageMeta,
    NormBBox,
    PlateRecord,
    QuadrantTag,
    iou,
    to_norm,
    to_px,
)
