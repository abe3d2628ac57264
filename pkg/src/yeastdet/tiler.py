"""2x2 quadrant tiling with annotation remapping.

Ground-truth boxes cut by an internal quadrant line are dropped rather than
clipped (``clip=True`` switches to clipping). Boxes touching the outer image
border are kept.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import EPS, Annotation, BBoxPx, ImageMeta, QuadrantTag, to_norm, to_px

TILE_ORDER = (QuadrantTag.TL, QuadrantTag.TR, QuadrantTag.BL, QuadrantTag.BR)


@dataclass(frozen=True, slots=True)
class TileSpec:
    tag: QuadrantTag
    offset_x: int
    offset_y: int
    width: int
    height: int

    def meta(self, parent: ImageMeta) -> ImageMeta:
        return ImageMeta(self.width, self.height, parent.plate_id, parent.well, self.tag)


@dataclass
class TilingResult:
    tiles: dict[QuadrantTag, list[Annotation]]
    straddling: int
    total: int
    clipped: int = 0
    assignment: list = field(default_factory=list)

    @property
    def kept(self) -> int:
        return sum(len(v) for v in self.tiles.values())


def quadrants(meta: ImageMeta) -> list[TileSpec]:
    """The four quadrants in TL, TR, BL, BR order."""
    W, H = meta.width, meta.height
    if W % 2 or H % 2:
        raise ValueError(f"quadrant tiling needs even dimensions, got {W}x{H}")
    hw, hh = W // 2, H // 2
    return [
        TileSpec(QuadrantTag.TL, 0, 0, hw, hh),
        TileSpec(QuadrantTag.TR, hw, 0, hw, hh),
        TileSpec(QuadrantTag.BL, 0, hh, hw, hh),
        TileSpec(QuadrantTag.BR, hw, hh, hw, hh),
    ]


def _relation(px: BBoxPx, tile: TileSpec, tol_x: float, tol_y: float) -> str:
    """'inside', 'partial' or 'outside' of a box relative to a tile."""
    x0, y0 = tile.offset_x, tile.offset_y
    x1, y1 = x0 + tile.width, y0 + tile.height
    if px.x_min >= x0 - tol_x and px.x_max <= x1 + tol_x and px.y_min >= y0 - tol_y and px.y_max <= y1 + tol_y:
        return "inside"
    iw = min(px.x_max, x1) - max(px.x_min, x0)
    ih = min(px.y_max, y1) - max(px.y_min, y0)
    if iw > tol_x and ih > tol_y:
        return "partial"
    return "outside"


def _localize(px: BBoxPx, tile: TileSpec) -> BBoxPx:
    return px.translate(-tile.offset_x, -tile.offset_y).clamp(tile.width, tile.height)


def remap_annotations(
    annos: list[Annotation],
    meta: ImageMeta,
    tile: TileSpec,
    clip: bool = False,
) -> tuple[list[Annotation], int]:
    """Annotations of ``tile`` in tile-local normalized coordinates.

    Returns ``(kept, dropped)`` where ``dropped`` counts boxes that overlap
    the tile but are cut by its edge. With ``clip=True`` those boxes are
    clipped to the tile and kept instead, and ``dropped`` is 0.
    Containment uses a slack of ``EPS * dimension`` so boxes that end on
    a cut line after 6-decimal quantization stay whole.
    """
    tmeta = tile.meta(meta)
    tol_x, tol_y = EPS * meta.width, EPS * meta.height
    kept, dropped = [], 0
    for a in annos:
        px = to_px(a.box, meta)
        rel = _relation(px, tile, tol_x, tol_y)
        if rel == "inside" or (rel == "partial" and clip):
            kept.append(Annotation(a.class_id, to_norm(_localize(px, tile), tmeta)))
        elif rel == "partial":
            dropped += 1
    return kept, dropped


def split_annotations(annos: list[Annotation], meta: ImageMeta, clip: bool = False) -> TilingResult:
    """Distribute annotations over the four quadrants.

    Each annotation lands in exactly one tile (the first in TL, TR, BL, BR
    order that contains it) or is counted once as straddling a cut line.
    ``assignment[i]`` is the tag for annotation ``i``, or None if dropped.
    With ``clip=True`` straddling boxes are clipped into every tile they
    overlap and reported in ``clipped``.
    """
    specs = quadrants(meta)
    tol_x, tol_y = EPS * meta.width, EPS * meta.height
    tiles: dict[QuadrantTag, list[Annotation]] = {t.tag: [] for t in specs}
    assignment = []
    straddling = clipped = 0
    for a in annos:
        px = to_px(a.box, meta)
        rels = [_relation(px, t, tol_x, tol_y) for t in specs]
        home = next((t for t, r in zip(specs, rels) if r == "inside"), None)
        if home is not None:
            tiles[home.tag].append(Annotation(a.class_id, to_norm(_localize(px, home), home.meta(meta))))
            assignment.append(home.tag)
            continue
        assignment.append(None)
        if clip:
            clipped += 1
            for t, r in zip(specs, rels):
                if r == "partial":
                    tiles[t.tag].append(Annotation(a.class_id, to_norm(_localize(px, t), t.meta(meta))))
        else:
            straddling += 1
    return TilingResult(tiles, straddling, len(annos), clipped, assignment)


def crop(img: np.ndarray, tile: TileSpec) -> np.ndarray:
    """Pixel-exact copy of the tile region of ``img`` (2-D or H x W x C)."""
    h, w = img.shape[:2]
    if tile.offset_x < 0 or tile.offset_y < 0 or tile.offset_x + tile.width > w or tile.offset_y + tile.height > h:
        raise ValueError(
            f"tile {tile.tag.value} ({tile.offset_x},{tile.offset_y},{tile.width}x{tile.height}) "
            f"outside image {w}x{h}"
        )
    return img[tile.offset_y : tile.offset_y + tile.height, tile.offset_x : tile.offset_x + tile.width].copy()
