"""Manifest loading, channel I/O and the BF+GFP composite."""

from __future__ import annotations

import csv
import logging
from pathlib import Path
from typing import Optional

import numpy as np
from PIL import Image

from .core import PlateRecord, QuadrantTag

log = logging.getLogger(__name__)

MANIFEST_HEADER = ["plate", "well", "class", "bf_path", "gfp_path"]
DEFAULT_PERCENTILES = (1.0, 99.0)


class ManifestError(ValueError):
    """A manifest row could not be turned into a PlateRecord."""


def load_manifest(path) -> list[PlateRecord]:
    """Read a ``plate,well,class,bf_path,gfp_path`` table.

    Relative channel paths are resolved against the manifest's directory.
    Row numbers in error messages count the header as row 1.
    """
    path = Path(path)
    base = path.parent
    records: list[PlateRecord] = []
    seen: dict[tuple[int, str], int] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ManifestError(f"{path}: empty manifest, expected header {','.join(MANIFEST_HEADER)}")
        header = [h.strip() for h in header]
        missing = [c for c in MANIFEST_HEADER if c not in header]
        if missing or header != MANIFEST_HEADER:
            raise ManifestError(
                f"{path}: header must be exactly {','.join(MANIFEST_HEADER)}"
                + (f" (missing column(s): {', '.join(missing)})" if missing else f", got {','.join(header)}")
            )
        for row_no, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(MANIFEST_HEADER):
                raise ManifestError(f"{path}: row {row_no}: expected 5 fields, got {len(row)}")
            plate, well, label, bf, gfp = (c.strip() for c in row)
            try:
                plate_id = int(plate)
            except ValueError:
                raise ManifestError(f"{path}: row {row_no}: plate {plate!r} is not an integer") from None
            key = (plate_id, well)
            if key in seen:
                raise ManifestError(
                    f"{path}: row {row_no}: duplicate plate/well {plate_id},{well} (first at row {seen[key]})"
                )
            seen[key] = row_no
            try:
                rec = PlateRecord(
                    plate_id=plate_id,
                    well=well,
                    class_label=label,
                    bf_path=str(base / bf) if bf else bf,
                    gfp_path=str(base / gfp) if gfp else gfp,
                )
            except ValueError as exc:
                raise ManifestError(f"{path}: row {row_no}: {exc}") from None
            records.append(rec)
    return records


def write_manifest(records, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(MANIFEST_HEADER)
        for r in records:
            writer.writerow([r.plate_id, r.well, r.class_label, r.bf_path, r.gfp_path])


def image_stem(plate_id: int, well: str, tile: Optional[QuadrantTag | str] = None) -> str:
    stem = f"plate{plate_id}_{well}"
    if tile is not None:
        stem += f"_{QuadrantTag(tile).value}"
    return stem


def parse_stem(stem: str) -> tuple[int, str, Optional[QuadrantTag]]:
    """Inverse of :func:`image_stem`."""
    if not stem.startswith("plate"):
        raise ValueError(f"not a plate image name: {stem!r}")
    parts = stem[len("plate"):].split("_")
    if len(parts) not in (2, 3):
        raise ValueError(f"not a plate image name: {stem!r}")
    tile = QuadrantTag(parts[2]) if len(parts) == 3 else None
    return int(parts[0]), parts[1], tile


def read_gray(path) -> np.ndarray:
    """Load a single-channel 8- or 16-bit image as a 2-D array."""
    path = Path(path)
    if path.suffix.lower() in (".tif", ".tiff"):
        import tifffile

        arr = tifffile.imread(path)
    else:
        with Image.open(path) as im:
            arr = np.array(im)
    arr = np.squeeze(arr)
    if arr.ndim != 2:
        raise ValueError(f"{path}: expected a single-channel image, got shape {arr.shape}")
    if arr.dtype not in (np.uint8, np.uint16):
        if arr.dtype.kind in "iu" and arr.min() >= 0 and arr.max() <= 65535:
            arr = arr.astype(np.uint16)
        else:
            raise ValueError(f"{path}: unsupported sample type {arr.dtype}")
    return arr


def write_png(arr: np.ndarray, path) -> None:
    """Write an 8-bit gray/RGB or 16-bit gray PNG (byte-deterministic)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    # Fast zlib level: noisy 16-bit channels barely compress at higher levels.
    Image.fromarray(np.ascontiguousarray(arr)).save(path, format="PNG", compress_level=1)


def write_tiff(arr: np.ndarray, path) -> None:
    """Write an uncompressed single-page TIFF (byte-deterministic)."""
    import tifffile

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tifffile.imwrite(path, np.ascontiguousarray(arr), metadata=None)


def percentile_stretch(img: np.ndarray, p_low: float = 1.0, p_high: float = 99.0) -> np.ndarray:
    """Linearly map the ``p_low``/``p_high`` percentiles to 0/255, clamped.

    A window of zero width (constant image) maps every pixel to 0.
    """
    if not 0 <= p_low < p_high <= 100:
        raise ValueError(f"need 0 <= p_low < p_high <= 100, got ({p_low}, {p_high})")
    if img.size == 0:
        raise ValueError("cannot stretch an empty image")
    lo, hi = np.percentile(img, [p_low, p_high])
    if hi <= lo:
        return np.zeros(img.shape, dtype=np.uint8)
    if img.dtype in (np.uint8, np.uint16):
        # Same pointwise formula, evaluated once per possible level.
        levels = np.arange(np.iinfo(img.dtype).max + 1, dtype=np.float64)
        return _stretch_values(levels, lo, hi)[img]
    return _stretch_values(img.astype(np.float64), lo, hi)


def _stretch_values(values: np.ndarray, lo: float, hi: float) -> np.ndarray:
    scaled = (values - lo) * (255.0 / (hi - lo))
    return np.rint(np.clip(scaled, 0.0, 255.0)).astype(np.uint8)


def to_uint8(img: np.ndarray) -> np.ndarray:
    """Depth reduction used when stretching is off: keep the high byte of 16-bit data."""
    if img.dtype == np.uint8:
        return img
    if img.dtype == np.uint16:
        return (img >> 8).astype(np.uint8)
    raise ValueError(f"unsupported sample type {img.dtype}")


def merge_channels(bf: np.ndarray, gfp: np.ndarray) -> np.ndarray:
    """Composite two 8-bit channels: BF as gray, GFP signal as green.

    Per pixel ``R = B = bf`` and ``G = max(bf, gfp)``.
    """
    if bf.shape != gfp.shape:
        raise ValueError(
            f"channel size mismatch: bf {bf.shape[1]}x{bf.shape[0]} vs gfp {gfp.shape[1]}x{gfp.shape[0]}"
        )
    if bf.dtype != np.uint8 or gfp.dtype != np.uint8:
        raise ValueError(f"merge expects 8-bit channels, got {bf.dtype} and {gfp.dtype}")
    return np.stack([bf, np.maximum(bf, gfp), bf], axis=-1)


def composite(
    record: PlateRecord,
    stretch: bool = True,
    p_low: float = DEFAULT_PERCENTILES[0],
    p_high: float = DEFAULT_PERCENTILES[1],
) -> np.ndarray:
    """Load both channels of ``record`` and return the RGB composite."""
    bf = read_gray(record.bf_path)
    gfp = read_gray(record.gfp_path)
    if stretch:
        bf8 = percentile_stretch(bf, p_low, p_high)
        gfp8 = percentile_stretch(gfp, p_low, p_high)
    else:
        bf8, gfp8 = to_uint8(bf), to_uint8(gfp)
    return merge_channels(bf8, gfp8)
