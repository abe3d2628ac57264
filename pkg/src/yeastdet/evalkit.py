"""Detection matching, AP/mAP, classification metrics, confusion matrices and votes.

Detection quality (AP, class-aware matching) and classification quality
(matched-pair contingency, class-agnostic matching) are kept separate:
unmatched boxes never enter the contingency, they are only counted.
"""

from __future__ import annotations

import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field
from itertools import chain
from typing import Mapping, Optional, Sequence

import numpy as np

from .core import Annotation, ClassSet, Detection, ImageMeta, corners_array, iou_matrix

log = logging.getLogger(__name__)

DEFAULT_IOU_THRESH = 0.5


class EvalError(ValueError):
    pass


@dataclass(frozen=True)
class MatchResult:
    pairs: tuple[tuple[int, int, float], ...]  # (gt index, det index, iou)
    unmatched_gt: tuple[int, ...]
    unmatched_det: tuple[int, ...]


def detection_order(dets: Sequence[Detection]) -> list[int]:
    """Descending confidence, ties broken by lower index."""
    return sorted(range(len(dets)), key=lambda j: (-dets[j].confidence, j))


def match(
    gts: Sequence[Annotation],
    dets: Sequence[Detection],
    iou_thresh: float = DEFAULT_IOU_THRESH,
    class_aware: bool = False,
) -> MatchResult:
    """Greedy one-to-one matching of detections to ground truth.

    Detections are visited in :func:`detection_order`; each takes the still
    unmatched gt with the highest IoU >= ``iou_thresh`` (restricted to its own
    class when ``class_aware``), ties going to the lower gt index.
    """
    if not 0 < iou_thresh <= 1:
        raise ValueError(f"iou_thresh must be in (0, 1], got {iou_thresh}")
    ious = iou_matrix(corners_array([d.box for d in dets]), corners_array([g.box for g in gts]))
    eligible = ious >= iou_thresh
    if class_aware and len(dets) and len(gts):
        det_cls = np.array([d.class_id for d in dets])
        gt_cls = np.array([g.class_id for g in gts])
        eligible &= det_cls[:, None] == gt_cls[None, :]
    scores = np.where(eligible, ious, -1.0)
    gt_free = np.ones(len(gts), dtype=bool)
    pairs = []
    matched_det = set()
    for j in detection_order(dets):
        if not len(gts):
            break
        row = np.where(gt_free, scores[j], -1.0)
        g = int(np.argmax(row))
        if row[g] < 0:
            continue
        gt_free[g] = False
        matched_det.add(j)
        pairs.append((g, j, float(ious[j, g])))
    return MatchResult(
        pairs=tuple(pairs),
        unmatched_gt=tuple(int(i) for i in np.flatnonzero(gt_free)),
        unmatched_det=tuple(j for j in range(len(dets)) if j not in matched_det),
    )


def ap_from_ranked(tp_flags: Sequence[bool], n_gt: int) -> float:
    """All-point interpolated AP from TP/FP flags already in rank order."""
    if n_gt <= 0:
        raise ValueError("AP undefined without ground truth")
    tp = np.cumsum(np.asarray(tp_flags, dtype=float))
    fp = np.cumsum(1.0 - np.asarray(tp_flags, dtype=float))
    if tp.size == 0:
        return 0.0
    recall = tp / n_gt
    precision = tp / (tp + fp)
    mrec = np.concatenate([[0.0], recall, [1.0]])
    mpre = np.concatenate([[0.0], precision, [0.0]])
    mpre = np.maximum.accumulate(mpre[::-1])[::-1]
    step = np.flatnonzero(mrec[1:] != mrec[:-1])
    return float(np.sum((mrec[step + 1] - mrec[step]) * mpre[step + 1]))


@dataclass
class _ClassTally:
    n_gt: int = 0
    scored: list = field(default_factory=list)  # (-confidence, image rank, det index, is_tp)

    def ap(self) -> Optional[float]:
        if self.n_gt == 0:
            return None
        ranked = sorted(self.scored)
        return ap_from_ranked([s[3] for s in ranked], self.n_gt)


def _tally_image(tallies, gts, dets, image_rank: int, iou_thresh: float) -> None:
    m = match(gts, dets, iou_thresh, class_aware=True)
    tp_dets = {j for _, j, _ in m.pairs}
    for g in gts:
        tallies[g.class_id].n_gt += 1
    for j, d in enumerate(dets):
        tallies[d.class_id].scored.append((-d.confidence, image_rank, j, j in tp_dets))


def average_precision(
    gts: Sequence[Annotation],
    dets: Sequence[Detection],
    class_id: int,
    iou_thresh: float = DEFAULT_IOU_THRESH,
) -> Optional[float]:
    """AP of one class on one image; None when the class has no ground truth."""
    tallies: dict[int, _ClassTally] = defaultdict(_ClassTally)
    _tally_image(tallies, gts, dets, 0, iou_thresh)
    result = tallies[class_id].ap()
    if result is None:
        log.warning("class %d has no ground truth; AP undefined", class_id)
    return result


@dataclass(frozen=True)
class ClassificationMetrics:
    """Matched-pair classification quality; all values None when nothing matched."""

    total: int
    correct: int
    accuracy: Optional[float]
    micro_precision: Optional[float]
    micro_recall: Optional[float]
    micro_f1: Optional[float]
    macro_precision: Optional[float]
    macro_recall: Optional[float]
    macro_f1: Optional[float]
    defined: bool

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def _f1(p: float, r: float) -> float:
    return 0.0 if p + r == 0 else 2 * p * r / (p + r)


def contingency(m: MatchResult, gts, dets, n_classes: int) -> np.ndarray:
    """Counts of (true class, predicted class) over matched pairs."""
    counts = np.zeros((n_classes, n_classes), dtype=np.int64)
    for g, j, _ in m.pairs:
        counts[gts[g].class_id, dets[j].class_id] += 1
    return counts


def metrics_from_counts(counts: np.ndarray) -> ClassificationMetrics:
    total = int(counts.sum())
    correct = int(np.trace(counts))
    if total == 0:
        return ClassificationMetrics(0, 0, None, None, None, None, None, None, None, False)
    # Every matched pair is exactly one TP or one FP (for its predicted class)
    # and one TP or one FN (for its true class), so the micro sums coincide.
    tp = correct
    fp = int(counts.sum(axis=0).sum()) - tp
    fn = int(counts.sum(axis=1).sum()) - tp
    micro_p = tp / (tp + fp)
    micro_r = tp / (tp + fn)
    accuracy = correct / total
    micro_f1 = micro_p if micro_p == micro_r else _f1(micro_p, micro_r)
    support = counts.sum(axis=1)
    predicted = counts.sum(axis=0)
    ps, rs, fs = [], [], []
    for c in np.flatnonzero(support):
        p = counts[c, c] / predicted[c] if predicted[c] else 0.0
        r = counts[c, c] / support[c]
        ps.append(p)
        rs.append(r)
        fs.append(_f1(p, r))
    return ClassificationMetrics(
        total=total,
        correct=correct,
        accuracy=accuracy,
        micro_precision=micro_p,
        micro_recall=micro_r,
        micro_f1=micro_f1,
        macro_precision=float(np.mean(ps)),
        macro_recall=float(np.mean(rs)),
        macro_f1=float(np.mean(fs)),
        defined=True,
    )


def classification_metrics(m: MatchResult, gts, dets, n_classes: Optional[int] = None) -> ClassificationMetrics:
    if n_classes is None:
        n_classes = 1 + max(chain((g.class_id for g in gts), (d.class_id for d in dets)), default=0)
    return metrics_from_counts(contingency(m, gts, dets, n_classes))


@dataclass(frozen=True)
class Confusion:
    counts: np.ndarray
    normalized: np.ndarray
    supported: tuple[bool, ...]

    @classmethod
    def from_counts(cls, counts: np.ndarray) -> "Confusion":
        counts = np.asarray(counts, dtype=np.int64)
        rows = counts.sum(axis=1)
        supported = rows > 0
        normalized = np.zeros(counts.shape, dtype=float)
        normalized[supported] = counts[supported] / rows[supported, None]
        return cls(counts, normalized, tuple(bool(s) for s in supported))


def confusion_matrix(m: MatchResult, gts, dets, class_set: ClassSet) -> Confusion:
    """Row = true class, column = predicted; rows without support stay zero and are flagged."""
    return Confusion.from_counts(contingency(m, gts, dets, len(class_set)))


def majority_vote(dets: Sequence[Detection], class_set: Optional[ClassSet] = None) -> Optional[int]:
    """Modal detected class; None when there is nothing to vote on.

    Ties on count go to the higher summed confidence (exactly rounded, so the
    result does not depend on detection order), then to the lower class id.
    """
    if not dets:
        return None
    counts: dict[int, int] = defaultdict(int)
    confs: dict[int, list[float]] = defaultdict(list)
    for d in dets:
        if class_set is not None and d.class_id >= len(class_set):
            raise ValueError(f"class id {d.class_id} outside class set of size {len(class_set)}")
        counts[d.class_id] += 1
        confs[d.class_id].append(d.confidence)
    return min(counts, key=lambda c: (-counts[c], -math.fsum(confs[c]), c))


def plate_vote_from_tiles(tile_dets: Sequence[Sequence[Detection]], class_set: Optional[ClassSet] = None) -> Optional[int]:
    """Plate-level vote pooled over the four quadrants of one image."""
    if len(tile_dets) != 4:
        raise ValueError(f"expected detections for 4 tiles, got {len(tile_dets)}")
    return majority_vote(list(chain.from_iterable(tile_dets)), class_set)


@dataclass(frozen=True)
class GtImage:
    meta: ImageMeta
    annotations: tuple[Annotation, ...]
    well_class: Optional[int] = None


@dataclass
class GroundTruth:
    class_set: ClassSet
    images: dict[str, GtImage]


@dataclass(frozen=True)
class EvalConfig:
    iou_thresh: float = DEFAULT_IOU_THRESH
    allow_missing: bool = False
    class_set: Optional[ClassSet] = None


@dataclass
class EvalReport:
    class_names: list[str]
    iou_thresh: float
    per_class_ap: dict[str, Optional[float]]
    map: Optional[float]
    classification: ClassificationMetrics
    confusion: Confusion
    gt_count: int
    det_count: int
    matched_count: int
    image_count: int
    missing_images: list[str]
    extra_images: list[str]
    votes: list[dict]
    vote_accuracy: Optional[float]
    training: dict = field(default_factory=dict)
    notes: list[str] = field(default_factory=list)

    @property
    def unmatched_gt(self) -> int:
        return self.gt_count - self.matched_count

    @property
    def unmatched_det(self) -> int:
        return self.det_count - self.matched_count

    def as_dict(self) -> dict:
        return {
            "classes": self.class_names,
            "iou_thresh": self.iou_thresh,
            "per_class_ap": self.per_class_ap,
            "map": self.map,
            "classification": self.classification.as_dict(),
            "confusion": {
                "counts": self.confusion.counts.tolist(),
                "normalized": self.confusion.normalized.tolist(),
                "supported": list(self.confusion.supported),
            },
            "counts": {
                "images": self.image_count,
                "gt": self.gt_count,
                "detections": self.det_count,
                "matched": self.matched_count,
                "unmatched_gt": self.unmatched_gt,
                "unmatched_det": self.unmatched_det,
            },
            "missing_images": self.missing_images,
            "extra_images": self.extra_images,
            "votes": self.votes,
            "vote_accuracy": self.vote_accuracy,
            "training": self.training,
            "notes": self.notes,
        }


REPORT_NOTES = [
    "Classification metrics and the confusion matrix use class-agnostic matched pairs only;"
    " unmatched ground truth and detections are reported under counts.",
    "AP uses all-point interpolation at a single IoU threshold.",
]


def evaluate_run(gt: GroundTruth, dfile, config: EvalConfig = EvalConfig(), training: Optional[Mapping] = None) -> EvalReport:
    """Assemble the full report for one run (typically one test fold).

    Ground-truth images absent from ``dfile`` raise unless
    ``config.allow_missing``; they then count as images with no detections.
    Detection entries for images without ground truth are kept as pure false
    positives and listed in ``extra_images``.
    """
    class_set = gt.class_set
    if config.class_set is not None and tuple(config.class_set) != tuple(class_set):
        raise EvalError(f"class set mismatch: run {list(config.class_set)} vs ground truth {list(class_set)}")
    n_cls = len(class_set)
    missing = sorted(p for p in gt.images if dfile.get(p) is None)
    if missing and not config.allow_missing:
        raise EvalError(f"{len(missing)} ground-truth image(s) have no detection entry, e.g. {missing[0]!r}")
    extra = sorted(p for p in dfile.entries if p not in gt.images)

    tallies: dict[int, _ClassTally] = defaultdict(_ClassTally)
    counts = np.zeros((n_cls, n_cls), dtype=np.int64)
    gt_count = det_count = matched = 0
    groups: dict[tuple, dict] = {}
    for rank, path in enumerate(sorted(set(gt.images) | set(dfile.entries))):
        image = gt.images.get(path)
        entry = dfile.get(path)
        gts = list(image.annotations) if image else []
        dets = list(entry.detections) if entry else []
        for d in dets:
            if d.class_id >= n_cls:
                raise EvalError(f"{path}: detection class id {d.class_id} outside class set")
        gt_count += len(gts)
        det_count += len(dets)
        _tally_image(tallies, gts, dets, rank, config.iou_thresh)
        m = match(gts, dets, config.iou_thresh, class_aware=False)
        matched += len(m.pairs)
        counts += contingency(m, gts, dets, n_cls)
        if image is not None and image.meta.plate_id is not None and image.meta.well is not None:
            key = (image.meta.plate_id, image.meta.well)
            grp = groups.setdefault(key, {"true": image.well_class, "tiles": {}, "full": None})
            if image.meta.tile is not None:
                grp["tiles"][image.meta.tile.value] = dets
            else:
                grp["full"] = dets

    per_class_ap: dict[str, Optional[float]] = {}
    for c, name in enumerate(class_set):
        ap = tallies[c].ap() if c in tallies else None
        if ap is None:
            log.warning("class %s has no ground truth in this run; excluded from mAP", name)
        per_class_ap[name] = ap
    defined = [v for v in per_class_ap.values() if v is not None]
    map_value = float(np.mean(defined)) if defined else None

    votes = []
    for (plate, well), grp in sorted(groups.items()):
        if grp["full"] is not None:
            pred = majority_vote(grp["full"], class_set)
            source = "full"
        elif len(grp["tiles"]) == 4:
            pred = plate_vote_from_tiles([grp["tiles"][t] for t in ("TL", "TR", "BL", "BR")], class_set)
            source = "quadrants"
        else:
            pred = majority_vote(list(chain.from_iterable(grp["tiles"].values())), class_set)
            source = f"{len(grp['tiles'])} tile(s)"
        true = grp["true"]
        votes.append(
            {
                "plate": plate,
                "well": well,
                "source": source,
                "true": class_set.name_of(true) if true is not None else None,
                "predicted": class_set.name_of(pred) if pred is not None else None,
                "correct": (pred == true) if (true is not None and pred is not None) else None,
            }
        )
    scored = [v["correct"] for v in votes if v["true"] is not None]
    vote_accuracy = sum(1 for c in scored if c) / len(scored) if scored else None

    classification = metrics_from_counts(counts)
    notes = list(REPORT_NOTES)
    if not classification.defined:
        notes.append("No matched pairs: classification metrics undefined.")
    return EvalReport(
        class_names=list(class_set),
        iou_thresh=config.iou_thresh,
        per_class_ap=per_class_ap,
        map=map_value,
        classification=classification,
        confusion=Confusion.from_counts(counts),
        gt_count=gt_count,
        det_count=det_count,
        matched_count=matched,
        image_count=len(gt.images),
        missing_images=missing,
        extra_images=extra,
        votes=votes,
        vote_accuracy=vote_accuracy,
        training=dict(training or {}),
        notes=notes,
    )


FOLD_COLUMNS = ("precision", "recall", "f1", "accuracy")


def fold_row(report: EvalReport) -> dict[str, Optional[float]]:
    c = report.classification
    return {
        "precision": c.micro_precision,
        "recall": c.micro_recall,
        "f1": c.micro_f1,
        "accuracy": c.accuracy,
        "map": report.map,
    }


def average_rows(rows: Sequence[Mapping[str, Optional[float]]]) -> dict[str, Optional[float]]:
    """Arithmetic mean per column over folds; a column with any undefined fold is undefined."""
    out = {}
    for key in rows[0]:
        vals = [r[key] for r in rows]
        out[key] = None if any(v is None for v in vals) else math.fsum(vals) / len(vals)
    return out
