"""Synthetic two-channel plates with exact ground truth, plus a mock detector.

Cells are axis-aligned ellipses centred on pixel centres with integer
semi-axes, so a cell with semi-axes (a, b) centred on pixel (i, j) covers
exactly the pixel box [i - a, i + a + 1) x [j - b, j + b + 1). That box
contains the continuous ellipse and is what ``instances_to_boxes`` recovers
from the mask when the cell is not occluded.
"""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .core import Annotation, BBoxPx, ClassSet, Detection, ImageMeta, NormBBox, PlateRecord, iou_matrix, to_norm, to_px

WELL_ROWS = "ABCDEFGHIJKLMNOP"
WELL_COLS = 24


class SynthError(RuntimeError):
    pass


@dataclass(frozen=True)
class SynthConfig:
    seed: int = 0
    width: int = 1344
    height: int = 1024
    n_cells: tuple[int, int] = (80, 120)
    radius: tuple[int, int] = (10, 20)
    max_overlap: float = 0.0  # max box IoU between two cells
    class_label: str = "Cytosol"
    class_id: int = 0
    bf_background: float = 2000.0
    bf_rim: float = 900.0
    bf_interior: float = 300.0
    gfp_background: float = 400.0
    gfp_signal: float = 3000.0
    noise_sigma: float = 40.0
    max_attempts: int = 500

    def __post_init__(self):
        lo, hi = self.radius
        if lo < 1 or hi < lo:
            raise ValueError(f"radius range must satisfy 1 <= min <= max, got {self.radius}")
        if self.n_cells[0] < 0 or self.n_cells[1] < self.n_cells[0]:
            raise ValueError(f"bad cell count range {self.n_cells}")
        if not 0 <= self.max_overlap < 1:
            raise ValueError(f"max_overlap must be in [0, 1), got {self.max_overlap}")
        if self.width < 2 * hi + 1 or self.height < 2 * hi + 1:
            raise ValueError("image too small for the radius range")


@dataclass(frozen=True)
class NoiseConfig:
    """Parametric detector errors. The defaults describe a perfect detector."""

    jitter_sigma_px: float = 0.0
    drop_prob: float = 0.0
    false_positive_rate: float = 0.0  # expected false positives per image
    class_confusion: Optional[tuple[tuple[float, ...], ...]] = None  # row-stochastic, None = identity
    correct_mean: float = 1.0
    error_mean: float = 0.5
    spread: float = 0.0
    fp_size_px: tuple[float, float] = (15.0, 40.0)
    seed: int = 0

    def __post_init__(self):
        if not 0 <= self.drop_prob <= 1:
            raise ValueError(f"drop_prob must be in [0, 1], got {self.drop_prob}")
        if self.false_positive_rate < 0 or self.jitter_sigma_px < 0 or self.spread < 0:
            raise ValueError("rates and spreads must be >= 0")
        if not (0 <= self.correct_mean <= 1 and 0 <= self.error_mean <= 1):
            raise ValueError("confidence means must be in [0, 1]")
        if self.class_confusion is not None:
            m = np.asarray(self.class_confusion, dtype=float)
            if m.ndim != 2 or m.shape[0] != m.shape[1]:
                raise ValueError("class_confusion must be a square matrix")
            if (m < 0).any() or (m > 1).any() or np.abs(m.sum(axis=1) - 1).max() > 1e-9:
                raise ValueError("class_confusion rows must be probability vectors summing to 1")
            object.__setattr__(self, "class_confusion", tuple(tuple(float(v) for v in row) for row in m))


@dataclass(frozen=True)
class Cell:
    label: int
    ci: int  # centre pixel column
    cj: int  # centre pixel row
    a: int  # semi-axis along x
    b: int  # semi-axis along y

    @property
    def box(self) -> BBoxPx:
        return BBoxPx(self.ci - self.a, self.cj - self.b, self.ci + self.a + 1, self.cj + self.b + 1)


@dataclass
class SynthPlate:
    bf: np.ndarray
    gfp: np.ndarray
    mask: np.ndarray
    annotations: list[Annotation]
    cells: list[Cell] = field(default_factory=list)

    @property
    def meta(self) -> ImageMeta:
        return ImageMeta(self.mask.shape[1], self.mask.shape[0])


def derive_seed(base: int, *parts) -> np.random.SeedSequence:
    """Stable child seed from a base seed and arbitrary ints/strings."""
    words = [int(base)]
    for p in parts:
        words.append(p if isinstance(p, int) else zlib.crc32(str(p).encode()))
    return np.random.SeedSequence(words)


def _boxes_array(cells: Sequence[Cell]) -> np.ndarray:
    return np.array([c.box.as_tuple() for c in cells], dtype=float).reshape(-1, 4)


def place_cells(cfg: SynthConfig, rng: np.random.Generator) -> list[Cell]:
    """Rejection-sample cell positions under the overlap policy."""
    n = int(rng.integers(cfg.n_cells[0], cfg.n_cells[1] + 1))
    lo, hi = cfg.radius
    cells: list[Cell] = []
    boxes = np.zeros((n, 4))
    for k in range(n):
        for _ in range(cfg.max_attempts):
            a, b = (int(v) for v in rng.integers(lo, hi + 1, size=2))
            ci = int(rng.integers(a, cfg.width - a))
            cj = int(rng.integers(b, cfg.height - b))
            cand = Cell(k + 1, ci, cj, a, b)
            if k == 0:
                break
            overlap = iou_matrix(_boxes_array([cand]), boxes[:k])
            if overlap.max() <= cfg.max_overlap:
                break
        else:
            raise SynthError(
                f"could not place cell {k + 1} of {n} after {cfg.max_attempts} attempts; "
                "lower the cell count, radius range or raise max_overlap"
            )
        cells.append(cand)
        boxes[k] = cand.box.as_tuple()
    return cells


def _pattern(label: str) -> str:
    name = label.lower()
    if "nucleus" in name and "cytosol" in name:
        return "cytosol+nucleus"
    if name in ("er",) or "endoplasmic" in name or "reticulum" in name:
        return "rim"
    if "mito" in name:
        return "punctate"
    if "nucle" in name:
        return "inner"
    return "filled"


def _gfp_profile(pattern: str, rho: np.ndarray, dx: np.ndarray, dy: np.ndarray, cell: Cell, rng) -> np.ndarray:
    if pattern == "rim":
        return np.exp(-(((rho - 0.8) / 0.12) ** 2))
    if pattern == "inner":
        return np.exp(-((rho / 0.35) ** 2))
    if pattern == "cytosol+nucleus":
        return 0.6 * np.exp(-((rho / 0.9) ** 8)) + 0.4 * np.exp(-((rho / 0.35) ** 2))
    if pattern == "punctate":
        out = np.zeros_like(rho)
        for _ in range(int(rng.integers(3, 7))):
            r = 0.7 * math.sqrt(rng.random())
            t = 2 * math.pi * rng.random()
            px, py = r * cell.a * math.cos(t), r * cell.b * math.sin(t)
            out = np.maximum(out, np.exp(-((dx - px) ** 2 + (dy - py) ** 2) / 4.0))
        return out
    return np.exp(-((rho / 0.9) ** 8))


def gen_plate(cfg: SynthConfig) -> SynthPlate:
    """Render one plate: 16-bit BF and GFP channels, instance mask, annotations.

    Cells are painted in placement order and a cell only claims background
    pixels, so earlier cells are never occluded. Annotations are the pixel
    extents of each cell's visible pixels (equal to the ellipse box when the
    overlap policy is 0).
    """
    root = np.random.SeedSequence(cfg.seed)
    place_ss, shape_ss, noise_ss = root.spawn(3)
    cells = place_cells(cfg, np.random.default_rng(place_ss))
    shape_rng = np.random.default_rng(shape_ss)
    W, H = cfg.width, cfg.height
    mask = np.zeros((H, W), dtype=np.uint16 if len(cells) < 65536 else np.uint32)
    bf = np.full((H, W), cfg.bf_background, dtype=np.float64)
    gfp = np.full((H, W), cfg.gfp_background, dtype=np.float64)
    pattern = _pattern(cfg.class_label)
    meta = ImageMeta(W, H)
    annotations = []
    kept_cells = []
    for cell in cells:
        x0, y0, x1, y1 = (int(v) for v in cell.box.as_tuple())
        dx = np.arange(x0, x1)[None, :] - cell.ci
        dy = np.arange(y0, y1)[:, None] - cell.cj
        dx, dy = np.broadcast_to(dx, (y1 - y0, x1 - x0)), np.broadcast_to(dy, (y1 - y0, x1 - x0))
        rho = np.sqrt((dx / cell.a) ** 2 + (dy / cell.b) ** 2)
        inside = rho <= 1.0
        win = mask[y0:y1, x0:x1]
        claim = inside & (win == 0)
        if claim.sum() * 2 < inside.sum():
            # Mostly hidden under earlier cells: not a usable ground-truth instance.
            continue
        win[claim] = cell.label
        rim = np.exp(-(((rho - 0.92) / 0.08) ** 2))
        bf[y0:y1, x0:x1][claim] += (cfg.bf_interior - cfg.bf_rim * rim)[claim]
        gfp[y0:y1, x0:x1][claim] += (cfg.gfp_signal * _gfp_profile(pattern, rho, dx, dy, cell, shape_rng))[claim]
        ys, xs = np.nonzero(claim)
        box = BBoxPx(x0 + xs.min(), y0 + ys.min(), x0 + xs.max() + 1, y0 + ys.max() + 1)
        annotations.append(Annotation(cfg.class_id, to_norm(box, meta)))
        kept_cells.append(cell)
    noise_rng = np.random.default_rng(noise_ss)
    if cfg.noise_sigma > 0:
        bf += noise_rng.normal(0.0, cfg.noise_sigma, size=bf.shape)
        gfp += noise_rng.normal(0.0, cfg.noise_sigma, size=gfp.shape)
    to16 = lambda a: np.rint(np.clip(a, 0, 65535)).astype(np.uint16)  # noqa: E731
    return SynthPlate(to16(bf), to16(gfp), mask, annotations, kept_cells)


def layout_annotations(cfg: SynthConfig) -> list[Annotation]:
    """Annotations of :func:`gen_plate` without rendering pixels (overlap policy 0 only)."""
    if cfg.max_overlap != 0:
        raise ValueError("layout_annotations is exact only for max_overlap == 0")
    place_ss = np.random.SeedSequence(cfg.seed).spawn(3)[0]
    meta = ImageMeta(cfg.width, cfg.height)
    return [Annotation(cfg.class_id, to_norm(c.box, meta)) for c in place_cells(cfg, np.random.default_rng(place_ss))]


def _clamped_box(x0: float, y0: float, x1: float, y1: float, meta: ImageMeta) -> BBoxPx:
    x0, x1 = max(0.0, x0), min(float(meta.width), x1)
    y0, y1 = max(0.0, y0), min(float(meta.height), y1)
    if x1 - x0 < 1.0:
        x0, x1 = (x0, x0 + 1.0) if x0 + 1.0 <= meta.width else (meta.width - 1.0, float(meta.width))
    if y1 - y0 < 1.0:
        y0, y1 = (y0, y0 + 1.0) if y0 + 1.0 <= meta.height else (meta.height - 1.0, float(meta.height))
    return BBoxPx(x0, y0, x1, y1)


def _confidence(rng, mean: float, spread: float) -> float:
    if spread == 0:
        return mean
    return float(np.clip(rng.normal(mean, spread), 0.0, 1.0))


def mock_detect(
    annos: Sequence[Annotation],
    noise: NoiseConfig,
    meta: ImageMeta,
    rng: Optional[np.random.Generator] = None,
    n_classes: Optional[int] = None,
) -> list[Detection]:
    """Simulate a detector run on one image's ground truth.

    Each gt is dropped with ``drop_prob``; survivors get Gaussian jitter on
    centre and size, a class drawn from the confusion row of the true class,
    and a confidence from the correct/error model. A Poisson number of false
    positives (mean ``false_positive_rate``) is placed away from every gt
    (IoU < 0.1) so they cannot be matched.
    """
    rng = rng if rng is not None else np.random.default_rng(noise.seed)
    confusion = None if noise.class_confusion is None else np.asarray(noise.class_confusion)
    if n_classes is None:
        n_classes = len(confusion) if confusion is not None else 1 + max((a.class_id for a in annos), default=0)
    dets = []
    for a in annos:
        if noise.drop_prob > 0 and rng.random() < noise.drop_prob:
            continue
        px = to_px(a.box, meta)
        if noise.jitter_sigma_px > 0:
            jx, jy, jw, jh = rng.normal(0.0, noise.jitter_sigma_px, size=4)
            cx = (px.x_min + px.x_max) / 2 + jx
            cy = (px.y_min + px.y_max) / 2 + jy
            w, h = max(1.0, px.width + jw), max(1.0, px.height + jh)
            px = _clamped_box(cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2, meta)
            box = to_norm(px, meta)
        else:
            box = a.box
        if confusion is not None:
            cls = int(rng.choice(len(confusion), p=confusion[a.class_id]))
        else:
            cls = a.class_id
        mean = noise.correct_mean if cls == a.class_id else noise.error_mean
        dets.append(Detection(cls, box, _confidence(rng, mean, noise.spread)))
    if noise.false_positive_rate > 0:
        gt_corners = np.array([to_px(a.box, meta).as_tuple() for a in annos]).reshape(-1, 4)
        lo, hi = noise.fp_size_px
        for _ in range(int(rng.poisson(noise.false_positive_rate))):
            for _attempt in range(100):
                w = min(rng.uniform(lo, hi), meta.width)
                h = min(rng.uniform(lo, hi), meta.height)
                x0 = rng.uniform(0, meta.width - w)
                y0 = rng.uniform(0, meta.height - h)
                cand = BBoxPx(x0, y0, x0 + w, y0 + h)
                if not len(gt_corners) or iou_matrix(np.array([cand.as_tuple()]), gt_corners).max() < 0.1:
                    break
            cls = int(rng.integers(n_classes))
            dets.append(Detection(cls, to_norm(cand, meta), _confidence(rng, noise.error_mean, noise.spread)))
    return dets


def well_name(index: int) -> tuple[int, str]:
    """(plate, well) for the index-th well of a 16 x 24 plate layout."""
    per_plate = len(WELL_ROWS) * WELL_COLS
    plate = 1 + index // per_plate
    rem = index % per_plate
    return plate, f"{WELL_ROWS[rem // WELL_COLS]}{1 + rem % WELL_COLS}"


def plan_wells(class_counts: dict[str, int]) -> list[tuple[int, str, str]]:
    """Assign (plate, well, class) to the requested number of wells per class, classes interleaved."""
    pending = {c: n for c, n in class_counts.items()}
    order = []
    while any(pending.values()):
        for c in class_counts:
            if pending[c]:
                order.append(c)
                pending[c] -= 1
    out = []
    for i, c in enumerate(order):
        plate, well = well_name(i)
        out.append((plate, well, c))
    return out


def estimate_noise(report, n_images: int) -> dict:
    """Recover drop rate, false-positive rate and confusion rows from an EvalReport."""
    return {
        "drop_rate": report.unmatched_gt / report.gt_count if report.gt_count else None,
        "fp_rate": report.unmatched_det / n_images if n_images else None,
        "confusion": report.confusion.normalized,
        "row_support": report.confusion.counts.sum(axis=1),
    }


def write_plate_files(plate: SynthPlate, root, stem: str) -> dict[str, str]:
    """Write 16-bit bf/gfp TIFFs, a 16-bit mask PNG and the planted labels; returns relative paths."""
    from .datasetgen import write_label_file
    from .ingest import write_png, write_tiff

    root = Path(root)
    paths = {
        "bf": f"bf/{stem}.tif",
        "gfp": f"gfp/{stem}.tif",
        "mask": f"masks/{stem}.png",
        "truth": f"truth/{stem}.txt",
    }
    write_tiff(plate.bf, root / paths["bf"])
    write_tiff(plate.gfp, root / paths["gfp"])
    write_png(plate.mask.astype(np.uint16), root / paths["mask"])
    (root / paths["truth"]).parent.mkdir(parents=True, exist_ok=True)
    (root / paths["truth"]).write_text(write_label_file(plate.annotations), encoding="utf-8", newline="\n")
    return paths


def synth_record(plate_id: int, well: str, label: str) -> PlateRecord:
    from .ingest import image_stem

    stem = image_stem(plate_id, well)
    return PlateRecord(plate_id, well, label, f"bf/{stem}.tif", f"gfp/{stem}.tif")
