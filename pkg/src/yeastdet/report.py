"""Report emission: JSON, fold and confusion tables, text summary, overlays."""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from PIL import Image, ImageDraw, ImageFont

from .core import ClassSet, Detection, ImageMeta, to_px
from .evalkit import FOLD_COLUMNS, EvalReport, average_rows, fold_row

# Stable per-class colors (class id -> RGB); wraps around for >8 classes.
PALETTE = [
    (230, 25, 75),
    (0, 130, 200),
    (255, 225, 25),
    (245, 130, 48),
    (145, 30, 180),
    (70, 240, 240),
    (240, 50, 230),
    (250, 190, 212),
]


def class_color(class_id: int) -> tuple[int, int, int]:
    return PALETTE[class_id % len(PALETTE)]


def _fmt(v: Optional[float], digits: int = 3) -> str:
    return "n/a" if v is None else f"{v:.{digits}f}"


def dump_json(obj, path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8", newline="\n")


def _csv_text(rows: Sequence[Sequence]) -> str:
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerows(rows)
    return buf.getvalue()


def confusion_table(report: EvalReport, normalized: bool = True) -> str:
    names = report.class_names
    rows = [["true\\predicted", *names]]
    conf = report.confusion
    for i, name in enumerate(names):
        if normalized:
            cells = [f"{v:.3f}" for v in conf.normalized[i]] if conf.supported[i] else ["n/a"] * len(names)
        else:
            cells = [str(int(v)) for v in conf.counts[i]]
        rows.append([name, *cells])
    return _csv_text(rows)


def fold_table(reports: Sequence[EvalReport], labels: Optional[Sequence[str]] = None) -> tuple[str, dict]:
    """Per-fold precision/recall/F1/accuracy with an AVG row (3 decimals)."""
    rows = [fold_row(r) for r in reports]
    avg = average_rows(rows)
    labels = labels or [str(i) for i in range(len(reports))]
    table = [["fold", *FOLD_COLUMNS]]
    for label, row in zip(labels, rows):
        table.append([label, *(_fmt(row[c]) for c in FOLD_COLUMNS)])
    table.append(["AVG", *(_fmt(avg[c]) for c in FOLD_COLUMNS)])
    return _csv_text(table), {"folds": rows, "average": avg}


def summary_text(report: EvalReport, title: str = "evaluation") -> str:
    c = report.classification
    lines = [
        f"== {title} ==",
        f"images: {report.image_count}  gt boxes: {report.gt_count}  detections: {report.det_count}"
        f"  matched: {report.matched_count}",
        f"unmatched gt: {report.unmatched_gt}  unmatched detections: {report.unmatched_det}",
        f"mAP@{report.iou_thresh:g}: {_fmt(report.map)}",
    ]
    for name, ap in report.per_class_ap.items():
        lines.append(f"  AP {name}: {_fmt(ap)}")
    lines.append(
        f"precision {_fmt(c.micro_precision)}  recall {_fmt(c.micro_recall)}"
        f"  F1 {_fmt(c.micro_f1)}  accuracy {_fmt(c.accuracy)}"
    )
    lines.append(
        f"macro precision {_fmt(c.macro_precision)}  macro recall {_fmt(c.macro_recall)}  macro F1 {_fmt(c.macro_f1)}"
    )
    if report.vote_accuracy is not None:
        lines.append(f"well-level majority vote accuracy: {_fmt(report.vote_accuracy)} over {len(report.votes)} wells")
    if report.missing_images:
        lines.append(f"missing detection entries: {len(report.missing_images)}")
    if report.extra_images:
        lines.append(f"detection entries without ground truth: {len(report.extra_images)}")
    lines.append("confusion (row-normalized):")
    lines.extend("  " + line for line in confusion_table(report).splitlines())
    lines.extend(f"note: {n}" for n in report.notes)
    return "\n".join(lines) + "\n"


def write_report(report: EvalReport, out_dir, title: str = "evaluation") -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    dump_json(report.as_dict(), out / "report.json")
    (out / "confusion.csv").write_text(confusion_table(report), encoding="utf-8", newline="\n")
    (out / "confusion_counts.csv").write_text(confusion_table(report, normalized=False), encoding="utf-8", newline="\n")
    table, _ = fold_table([report], ["run"])
    (out / "metrics.csv").write_text(table, encoding="utf-8", newline="\n")
    (out / "summary.txt").write_text(summary_text(report, title), encoding="utf-8", newline="\n")


def render_overlay(rgb: np.ndarray, detections: Sequence[Detection], class_set: ClassSet) -> np.ndarray:
    """Draw detection boxes with class color and confidence onto a composite."""
    h, w = rgb.shape[:2]
    meta = ImageMeta(w, h)
    im = Image.fromarray(np.ascontiguousarray(rgb)).convert("RGB")
    if not detections:
        return np.array(im)
    draw = ImageDraw.Draw(im)
    font = ImageFont.load_default()
    for d in detections:
        px = to_px(d.box, meta)
        color = class_color(d.class_id)
        # Rasterize continuous corners to the pixels they cover.
        x0, y0 = int(np.floor(px.x_min)), int(np.floor(px.y_min))
        x1, y1 = max(x0, int(np.ceil(px.x_max)) - 1), max(y0, int(np.ceil(px.y_max)) - 1)
        draw.rectangle([x0, y0, x1, y1], outline=color, width=1)
        draw.text((x0 + 1, max(0, y0 - 11)), f"{class_set.name_of(d.class_id)[:3]} {d.confidence:.2f}", fill=color, font=font)
    return np.array(im)
