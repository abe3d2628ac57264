"""Independent reference implementations used only by the tests.

Each oracle takes a different route from the code it checks: IoU by pixel
counting, matching by plain scans and exhaustive enumeration, AP by an
explicit precision-envelope loop.
"""

from __future__ import annotations

import itertools

import numpy as np


def iou_by_raster(a, b, scale=1):
    """IoU of integer-corner boxes by counting covered pixels on a grid."""
    xs = [v * scale for v in (a[0], a[2], b[0], b[2])]
    ys = [v * scale for v in (a[1], a[3], b[1], b[3])]
    W, H = int(max(xs)) + 1, int(max(ys)) + 1
    ga = np.zeros((H, W), bool)
    gb = np.zeros((H, W), bool)
    ga[int(a[1] * scale):int(a[3] * scale), int(a[0] * scale):int(a[2] * scale)] = True
    gb[int(b[1] * scale):int(b[3] * scale), int(b[0] * scale):int(b[2] * scale)] = True
    union = (ga | gb).sum()
    return (ga & gb).sum() / union if union else 0.0


def scalar_iou(a, b):
    """IoU of (x0, y0, x1, y1) tuples, written out longhand."""
    ix0, iy0 = max(a[0], b[0]), max(a[1], b[1])
    ix1, iy1 = min(a[2], b[2]), min(a[3], b[3])
    if ix1 <= ix0 or iy1 <= iy0:
        return 0.0
    inter = (ix1 - ix0) * (iy1 - iy0)
    return min(1.0, inter / ((a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter))


def corners(box):
    return (box.cx - box.w / 2, box.cy - box.h / 2, box.cx + box.w / 2, box.cy + box.h / 2)


def naive_greedy(gts, dets, thr, class_aware=False):
    """The documented greedy rule by exhaustive scans; returns set of (gt, det)."""
    remaining = list(range(len(dets)))
    free = set(range(len(gts)))
    pairs = set()
    while remaining:
        best = remaining[0]
        for j in remaining:
            if dets[j].confidence > dets[best].confidence:
                best = j
        remaining.remove(best)
        choice, choice_iou = None, -1.0
        for g in sorted(free):
            if class_aware and gts[g].class_id != dets[best].class_id:
                continue
            v = scalar_iou(corners(gts[g].box), corners(dets[best].box))
            if v >= thr and v > choice_iou:
                choice, choice_iou = g, v
        if choice is not None:
            free.discard(choice)
            pairs.add((choice, best))
    return pairs


def max_matching_size(gts, dets, thr):
    """Largest one-to-one matching under the threshold, by enumerating assignments."""
    n, m = len(gts), len(dets)
    ok = [[scalar_iou(corners(gts[g].box), corners(dets[j].box)) >= thr for j in range(m)] for g in range(n)]
    best = 0
    for k in range(min(n, m), 0, -1):
        for gsub in itertools.combinations(range(n), k):
            for perm in itertools.permutations(range(m), k):
                if all(ok[g][j] for g, j in zip(gsub, perm)):
                    return k
    return best


def ap_by_envelope(tp_flags, n_gt):
    """AP = sum over recall increments of the max precision at any later rank."""
    tp = fp = 0
    points = []
    for flag in tp_flags:
        tp += flag
        fp += not flag
        points.append((tp / n_gt, tp / (tp + fp)))
    ap, prev_recall = 0.0, 0.0
    for i, (r, _) in enumerate(points):
        if r > prev_recall:
            ap += (r - prev_recall) * max(p for _, p in points[i:])
            prev_recall = r
    return ap


def majority_by_enumeration(dets):
    """Winner by explicit comparison of every class pair."""
    if not dets:
        return None
    classes = sorted({d.class_id for d in dets})
    from math import fsum

    stats = {c: (sum(1 for d in dets if d.class_id == c), fsum(d.confidence for d in dets if d.class_id == c)) for c in classes}
    for c in classes:
        if all(
            stats[c][0] > stats[o][0]
            or (stats[c][0] == stats[o][0] and stats[c][1] > stats[o][1])
            or (stats[c][0] == stats[o][0] and stats[c][1] == stats[o][1] and c < o)
            for o in classes
            if o != c
        ):
            return c
    raise AssertionError("no unique winner")
