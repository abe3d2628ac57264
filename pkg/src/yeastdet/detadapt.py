"""Detection files exchanged with an external detector.

Schema (UTF-8 JSON)::

    [
      {"image": "full/plate15_J9.png", "width": 1344, "height": 1024,
       "detections": [{"class_id": 2, "confidence": 0.91,
                       "cx": 0.5, "cy": 0.5, "w": 0.07, "h": 0.08}]}
    ]

Floats are written rounded to 6 decimals, so a file written once is a
fixed point: reading and rewriting it reproduces the same bytes.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .core import ClassSet, Detection, NormBBox

_FIELDS = ("class_id", "confidence", "cx", "cy", "w", "h")


class DetectionFormatError(ValueError):
    pass


@dataclass(frozen=True)
class ImageDetections:
    image: str
    width: int
    height: int
    detections: tuple[Detection, ...] = ()


@dataclass
class DetectionFile:
    entries: dict[str, ImageDetections] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.entries)

    def __eq__(self, other) -> bool:
        return isinstance(other, DetectionFile) and list(self.entries.items()) == list(other.entries.items())

    def add(self, entry: ImageDetections) -> None:
        if entry.image in self.entries:
            raise DetectionFormatError(f"duplicate entry for image {entry.image!r}")
        self.entries[entry.image] = entry

    def get(self, image: str) -> Optional[ImageDetections]:
        return self.entries.get(image)


def normalize_path(path: str, strip_prefix: str = "") -> str:
    """Canonical image key: forward slashes, optional root prefix removed."""
    p = path.replace("\\", "/")
    if strip_prefix:
        prefix = strip_prefix.replace("\\", "/").rstrip("/") + "/"
        if p.startswith(prefix):
            p = p[len(prefix):]
    while p.startswith("./"):
        p = p[2:]
    return p


def _parse_detection(raw, image: str, idx: int, n_classes: int) -> Detection:
    where = f"image {image!r}, detection {idx}"
    if not isinstance(raw, dict):
        raise DetectionFormatError(f"{where}: expected an object")
    missing = [k for k in _FIELDS if k not in raw]
    if missing:
        raise DetectionFormatError(f"{where}: missing field(s) {', '.join(missing)}")
    cid = raw["class_id"]
    if isinstance(cid, bool) or not isinstance(cid, int):
        raise DetectionFormatError(f"{where}: class_id must be an integer")
    if not 0 <= cid < n_classes:
        raise DetectionFormatError(f"{where}: unknown class id {cid} (class count {n_classes})")
    values = []
    for k in _FIELDS[1:]:
        v = raw[k]
        if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
            raise DetectionFormatError(f"{where}: {k} must be a finite number")
        values.append(float(v))
    conf, cx, cy, w, h = values
    if not 0.0 <= conf <= 1.0:
        raise DetectionFormatError(f"{where}: confidence {conf} outside [0, 1]")
    try:
        box = NormBBox(cx, cy, w, h)
    except ValueError as exc:
        raise DetectionFormatError(f"{where}: {exc}") from None
    return Detection(cid, box, conf)


def parse_detections(doc, class_set: ClassSet, strip_prefix: str = "") -> DetectionFile:
    if not isinstance(doc, list):
        raise DetectionFormatError("detection document must be a JSON array")
    out = DetectionFile()
    n = len(class_set)
    for i, entry in enumerate(doc):
        if not isinstance(entry, dict) or "image" not in entry:
            raise DetectionFormatError(f"entry {i}: expected an object with an 'image' field")
        image = normalize_path(str(entry["image"]), strip_prefix)
        try:
            width, height = int(entry["width"]), int(entry["height"])
        except (KeyError, TypeError, ValueError):
            raise DetectionFormatError(f"image {image!r}: width/height missing or not integers") from None
        if width <= 0 or height <= 0:
            raise DetectionFormatError(f"image {image!r}: nonpositive size {width}x{height}")
        raw_dets = entry.get("detections", [])
        if not isinstance(raw_dets, list):
            raise DetectionFormatError(f"image {image!r}: 'detections' must be an array")
        dets = tuple(_parse_detection(d, image, j, n) for j, d in enumerate(raw_dets))
        out.add(ImageDetections(image, width, height, dets))
    return out


def read_detections(path, class_set: ClassSet, strip_prefix: str = "") -> DetectionFile:
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DetectionFormatError(f"{path}: not valid JSON ({exc})") from None
    return parse_detections(doc, class_set, strip_prefix)


def _r6(x: float) -> float:
    return round(float(x), 6)


def to_document(dfile: DetectionFile) -> list:
    return [
        {
            "image": e.image,
            "width": e.width,
            "height": e.height,
            "detections": [
                {
                    "class_id": d.class_id,
                    "confidence": _r6(d.confidence),
                    "cx": _r6(d.box.cx),
                    "cy": _r6(d.box.cy),
                    "w": _r6(d.box.w),
                    "h": _r6(d.box.h),
                }
                for d in e.detections
            ],
        }
        for e in dfile.entries.values()
    ]


def dumps_detections(dfile: DetectionFile) -> str:
    # One image per line keeps large files diffable without pretty-printing every box.
    entries = to_document(dfile)
    if not entries:
        return "[]\n"
    body = ",\n".join(json.dumps(e, separators=(",", ":")) for e in entries)
    return f"[\n{body}\n]\n"


def write_detections(dfile: DetectionFile, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps_detections(dfile), encoding="utf-8", newline="\n")
