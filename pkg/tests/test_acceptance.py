"""Acceptance suite: one check per criterion, one PASS/FAIL line each.

Under pytest the lines are collected and printed in the terminal summary;
``python tests/test_acceptance.py`` runs the checks directly and prints them
as it goes.
"""

from __future__ import annotations

import hashlib
import math
import os
import subprocess
import sys
import tempfile
import time
from decimal import Decimal
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from oracles import majority_by_enumeration, max_matching_size, naive_greedy  # noqa: E402
from yeastdet.core import Annotation, BBoxPx, ClassSet, Detection, ImageMeta, PlateRecord, to_norm, to_px  # noqa: E402
from yeastdet.datasetgen import (  # noqa: E402
    Experiment,
    make_folds,
    n_valid,
    plan_splits,
    read_label_file,
    write_dataset_bundle,
    write_label_file,
)
from yeastdet.detadapt import DetectionFile, ImageDetections  # noqa: E402
from yeastdet.evalkit import (  # noqa: E402
    GroundTruth,
    GtImage,
    ap_from_ranked,
    average_precision,
    evaluate_run,
    majority_vote,
    match,
    metrics_from_counts,
    plate_vote_from_tiles,
)
from yeastdet.ingest import image_stem, merge_channels, parse_stem, percentile_stretch  # noqa: E402
from yeastdet.maskimport import mask_to_annotations  # noqa: E402
from yeastdet.synth import (  # noqa: E402
    NoiseConfig,
    SynthConfig,
    derive_seed,
    estimate_noise,
    gen_plate,
    layout_annotations,
    mock_detect,
    plan_wells,
)
from yeastdet.tiler import TILE_ORDER, crop, quadrants, split_annotations  # noqa: E402

CLASSES = ClassSet(("ER", "Cytosol", "Mitochondria", "Nucleus"))
FULL = ImageMeta(1344, 1024)
RESULTS: list[str] = []


def record(num: int, title: str, ok: bool, detail: str) -> bool:
    line = f"[{'PASS' if ok else 'FAIL'}] {num:2d}. {title}: {detail}"
    RESULTS.append(line)
    print(line, flush=True)
    return ok


def _random_px_box(rng, meta: ImageMeta, near_cut: bool) -> BBoxPx:
    w = rng.uniform(1.0, 80.0)
    h = rng.uniform(1.0, 80.0)
    if near_cut:
        cx = meta.width / 2 + rng.uniform(-60, 60)
        cy = rng.uniform(0, meta.height) if rng.random() < 0.5 else meta.height / 2 + rng.uniform(-60, 60)
    else:
        cx, cy = rng.uniform(0, meta.width), rng.uniform(0, meta.height)
    x0 = min(max(0.0, cx - w / 2), meta.width - w)
    y0 = min(max(0.0, cy - h / 2), meta.height - h)
    return BBoxPx(x0, y0, x0 + w, y0 + h)


# ---------------------------------------------------------------- 1


def check_1() -> bool:
    t0 = time.perf_counter()
    specs = quadrants(FULL)
    img = np.zeros((FULL.height, FULL.width, 3), np.uint8)
    tiles = [crop(img, s) for s in specs]
    elapsed = time.perf_counter() - t0
    geometry = [(s.offset_x, s.offset_y, s.width, s.height) for s in specs]
    want = [(0, 0, 672, 512), (672, 0, 672, 512), (0, 512, 672, 512), (672, 512, 672, 512)]
    ok = geometry == want and all(t.shape == (512, 672, 3) for t in tiles) and elapsed < 1.0
    return record(1, "quadrant geometry", ok, f"tiles {geometry}, {elapsed * 1e3:.1f} ms")


# ---------------------------------------------------------------- 2


def check_2() -> bool:
    rng = np.random.default_rng(2)
    bad = 0
    total = kept_total = 0
    tol = 1e-6 * max(FULL.width, FULL.height)
    for _ in range(1000):
        n = int(rng.integers(0, 60))
        boxes = [_random_px_box(rng, FULL, rng.random() < 0.4) for _ in range(n)]
        annos = [Annotation(int(rng.integers(4)), to_norm(b, FULL)) for b in boxes]
        res = split_annotations(annos, FULL)
        per_tile = sum(len(v) for v in res.tiles.values())
        ok = per_tile == res.kept and per_tile + res.straddling == n
        # Independent containment count per original box.
        for b, tag in zip(boxes, res.assignment):
            inside = [
                s.tag
                for s in quadrants(FULL)
                if b.x_min >= s.offset_x - tol and b.x_max <= s.offset_x + s.width + tol
                and b.y_min >= s.offset_y - tol and b.y_max <= s.offset_y + s.height + tol
            ]
            ok &= len(inside) <= 1 and (inside[0] if inside else None) == tag
        bad += not ok
        total += n
        kept_total += res.kept
    return record(
        2, "partition law", bad == 0,
        f"1000 sets, {total} boxes, {kept_total} kept, {total - kept_total} straddling, {bad} violations",
    )


# ---------------------------------------------------------------- 3


def check_3() -> bool:
    rows = []
    ok = True
    for seed in range(8):
        cfg = SynthConfig(seed=seed, n_cells=(100, 130))
        plate = gen_plate(cfg)
        annos, _ = mask_to_annotations(plate.mask, 0, plate.meta)
        res = split_annotations(annos, plate.meta)
        hx, hy = plate.meta.width / 2, plate.meta.height / 2
        planted_straddle = sum(
            1 for c in plate.cells if c.box.x_min < hx < c.box.x_max or c.box.y_min < hy < c.box.y_max
        )
        quad = res.kept
        full = len(annos)
        ok &= full >= 100 and quad <= full and (quad < full if planted_straddle else True)
        rows.append(f"{full}->{quad}")
    return record(3, "border-drop direction", ok, "full->quadrant counts " + ", ".join(rows))


# ---------------------------------------------------------------- 4


def label_text(seed: int, n: int = 10_000) -> str:
    rng = np.random.default_rng(seed)
    annos = []
    for i in range(n):
        meta = FULL if i % 2 else ImageMeta(672, 512)
        annos.append(Annotation(int(rng.integers(4)), to_norm(_random_px_box(rng, meta, False), meta)))
    return annos, write_label_file(annos)


def check_4() -> bool:
    annos, text = label_text(4)
    back = read_label_file(text, 4)
    worst = Decimal(0)
    ok = len(back) == len(annos)
    for a, b, line in zip(annos, back, text.splitlines()):
        fields = line.split()
        ok &= a.class_id == b.class_id == int(fields[0])
        for u, f in zip(a.box.as_tuple(), fields[1:]):
            worst = max(worst, abs(Decimal(u) - Decimal(f)))
        ok &= b.box.as_tuple() == tuple(float(f) for f in fields[1:])
    ok &= worst <= Decimal("5e-7")
    again = label_text(4)[1]
    # A fresh interpreter with a different hash seed must produce the same bytes.
    env = dict(os.environ, PYTHONHASHSEED="123")
    fresh = subprocess.run(
        [sys.executable, __file__, "--emit-labels", "4"], capture_output=True, env=env, check=True
    ).stdout
    digest = hashlib.sha256(text.encode()).hexdigest()
    same = again == text and hashlib.sha256(fresh).hexdigest() == digest
    return record(
        4, "label round-trip", bool(ok and same),
        f"10000 annotations, max error {float(worst):.3g}, rewrite byte-identical: {same}",
    )


# ---------------------------------------------------------------- 5


def _grid_instance(rng):
    meta = ImageMeta(100, 100)

    def box():
        x, y = rng.integers(0, 9, size=2)
        w, h = rng.integers(1, 5, size=2)
        return to_norm(BBoxPx(10 * x, 10 * y, 10 * min(x + w, 10), 10 * min(y + h, 10)), meta)

    gts = [Annotation(int(rng.integers(4)), box()) for _ in range(rng.integers(0, 7))]
    dets = [
        Detection(int(rng.integers(4)), box(), float(rng.choice([0.2, 0.5, 0.5, 0.8, 1.0])))
        for _ in range(rng.integers(0, 7))
    ]
    return gts, dets


def check_5() -> bool:
    rng = np.random.default_rng(5)
    mismatches = 0
    optimal = 0
    for _ in range(500):
        gts, dets = _grid_instance(rng)
        for aware in (False, True):
            m = match(gts, dets, 0.5, class_aware=aware)
            ref = naive_greedy(gts, dets, 0.5, aware)
            tp, fp, fn = len(m.pairs), len(m.unmatched_det), len(m.unmatched_gt)
            ref_counts = (len(ref), len(dets) - len(ref), len(gts) - len(ref))
            mismatches += {(g, j) for g, j, _ in m.pairs} != ref or (tp, fp, fn) != ref_counts
        optimal += len(match(gts, dets, 0.5).pairs) == max_matching_size(gts, dets, 0.5)
    meta = ImageMeta(100, 100)
    g = [Annotation(0, to_norm(BBoxPx(0, 0, 10, 10), meta)), Annotation(0, to_norm(BBoxPx(50, 50, 60, 60), meta))]
    d = [Detection(0, g[0].box, 0.9), Detection(0, to_norm(BBoxPx(80, 80, 90, 90), meta), 0.8)]
    hand = [
        (ap_from_ranked([True], 2), 0.5),
        (ap_from_ranked([False, True], 1), 0.5),
        (ap_from_ranked([True, False, True], 2), 0.5 + 1 / 3),
        (ap_from_ranked([True, True, False], 2), 1.0),
        (average_precision(g, d, 0), 0.5),
    ]
    ap_ok = all(abs(got - want) <= 1e-9 for got, want in hand)
    return record(
        5, "metric oracles", mismatches == 0 and ap_ok,
        f"500 instances x 2 modes, {mismatches} greedy mismatches; greedy = maximum matching in "
        f"{optimal}/500; hand AP cases {'exact' if ap_ok else 'WRONG'}",
    )


# ---------------------------------------------------------------- 6


def check_6() -> bool:
    rng = np.random.default_rng(6)
    worst = 0.0
    for _ in range(1000):
        k = int(rng.integers(1, 7))
        counts = rng.integers(0, 50, size=(k, k)) * (rng.random((k, k)) < 0.7)
        if counts.sum() == 0:
            counts[0, 0] = 1
        m = metrics_from_counts(counts)
        worst = max(worst, *(abs(v - m.accuracy) for v in (m.micro_precision, m.micro_recall, m.micro_f1)))
    fixture = np.zeros((4, 4), int)
    np.fill_diagonal(fixture, [230, 250, 255, 250])
    fixture[0, 2], fixture[1, 3], fixture[3, 0] = 6, 4, 5
    m = metrics_from_counts(fixture)
    cols = (m.micro_precision, m.micro_recall, m.micro_f1, m.accuracy)
    fixture_ok = m.total == 1000 and all(abs(v - 0.985) <= 1e-12 for v in cols)
    return record(
        6, "micro identity", worst <= 1e-12 and fixture_ok,
        f"1000 contingencies, max |micro - accuracy| = {worst:.2e}; 985/1000 fixture -> "
        + ", ".join(f"{v:.3f}" for v in cols),
    )


# ---------------------------------------------------------------- 7


def check_7() -> bool:
    rows = {
        0: (931, 22, 12, 34),
        1: (10, 950, 15, 25),
        2: (8, 12, 970, 10),
        3: (20, 30, 5, 945),
    }
    pairs = [(t, p) for t, row in rows.items() for p, n in enumerate(row) for _ in range(n)]
    order = np.random.default_rng(7).permutation(len(pairs))
    pairs = [pairs[i] for i in order]
    # Lay the pairs out as identical gt/detection boxes on a grid, 100 per image.
    images, dfile = {}, DetectionFile()
    for start in range(0, len(pairs), 100):
        chunk = pairs[start:start + 100]
        gts, dets = [], []
        for k, (t, p) in enumerate(chunk):
            x, y = 60 * (k % 20), 60 * (k // 20)
            box = to_norm(BBoxPx(x, y, x + 40, y + 40), FULL)
            gts.append(Annotation(t, box))
            dets.append(Detection(p, box, 0.9))
        name = f"img{start // 100}.png"
        images[name] = GtImage(FULL, tuple(gts))
        dfile.add(ImageDetections(name, FULL.width, FULL.height, tuple(dets)))
    report = evaluate_run(GroundTruth(CLASSES, images), dfile)
    er = report.confusion.normalized[0]
    target = (0.931, 0.022, 0.012, 0.034)
    row_ok = all(abs(a - b) <= 0.002 for a, b in zip(er, target))
    sums_ok = all(abs(s - 1.0) <= 1e-9 for s in report.confusion.normalized.sum(axis=1))
    counts_ok = report.confusion.counts[0].tolist() == [931, 22, 12, 34]
    return record(
        7, "confusion fixture", row_ok and sums_ok and counts_ok,
        "ER row " + " ".join(f"{v:.4f}" for v in er) + f"; rows sum to 1: {sums_ok}",
    )


# ---------------------------------------------------------------- 8


def check_8(n_plates: int = 100, n_cells: int = 100) -> bool:
    t0 = time.perf_counter()
    per_class = n_plates // len(CLASSES)
    plan = plan_wells({c: per_class for c in CLASSES})
    records, full_gt, tile_gt = [], {}, {}
    straddling = 0
    for plate_id, well, label in plan:
        cid = CLASSES.id_of(label)
        seed = int(derive_seed(8, plate_id, well).generate_state(1)[0])
        plate = gen_plate(SynthConfig(seed=seed, n_cells=(n_cells, n_cells), class_label=label, class_id=cid))
        rgb = merge_channels(percentile_stretch(plate.bf), percentile_stretch(plate.gfp))
        meta = ImageMeta(rgb.shape[1], rgb.shape[0], plate_id, well)
        annos, _ = mask_to_annotations(plate.mask, cid, meta)
        res = split_annotations(annos, meta)
        straddling += res.straddling
        stem = image_stem(plate_id, well)
        full_gt[stem] = GtImage(meta, tuple(annos), cid)
        for spec in quadrants(meta):
            crop(rgb, spec)
            tile_gt[image_stem(plate_id, well, spec.tag)] = GtImage(spec.meta(meta), tuple(res.tiles[spec.tag]), cid)
        records.append(PlateRecord(plate_id, well, label, f"bf/{stem}.tif", f"gfp/{stem}.tif"))
    folds = make_folds(records, 5, 8)
    failures = []
    maps = []
    for fold in range(5):
        _, _, test = plan_splits(records, folds, fold)
        keys = {image_stem(r.plate_id, r.well) for r in test}
        for name, source in (("full", full_gt), ("quadrants", tile_gt)):
            images = {k: v for k, v in source.items() if k.rsplit("_", 1)[0] in keys or k in keys}
            dfile = DetectionFile()
            for key, img in images.items():
                rng = np.random.default_rng(derive_seed(8, "mock", key))
                dets = mock_detect(img.annotations, NoiseConfig(), img.meta, rng=rng, n_classes=4)
                dfile.add(ImageDetections(key, img.meta.width, img.meta.height, tuple(dets)))
            rep = evaluate_run(GroundTruth(CLASSES, images), dfile)
            good = (
                rep.map == 1.0
                and rep.classification.accuracy == 1.0
                and np.array_equal(rep.confusion.normalized, np.eye(4))
                and rep.vote_accuracy == 1.0
                and rep.unmatched_gt == 0
                and rep.unmatched_det == 0
            )
            maps.append(rep.map)
            if not good:
                failures.append(f"{name} fold {fold}")
    elapsed = time.perf_counter() - t0
    n_full = sum(len(v.annotations) for v in full_gt.values())
    n_tile = sum(len(v.annotations) for v in tile_gt.values())
    ok = not failures and elapsed < 60.0 and n_tile + straddling == n_full
    detail = (
        f"{n_plates} plates, {n_full} cells ({n_tile} non-border), mAP/accuracy 1.0 and identity confusion "
        f"in {10 - len(failures)}/10 runs, {elapsed:.1f} s"
    )
    return record(8, "perfect-pipeline identity", ok, detail)


# ---------------------------------------------------------------- 9

PLANTED = (
    (0.931, 0.022, 0.012, 0.035),
    (0.020, 0.950, 0.010, 0.020),
    (0.010, 0.030, 0.940, 0.020),
    (0.030, 0.020, 0.010, 0.940),
)


def check_9(reps: int = 100, n_images: int = 100, cells: int = 100) -> bool:
    drop, fp_rate = 0.05, 0.02
    noise = NoiseConfig(drop_prob=drop, false_positive_rate=fp_rate, class_confusion=PLANTED)
    layouts = {}
    for i in range(n_images):
        cfg = SynthConfig(seed=9000 + i, n_cells=(cells, cells), class_id=i % 4, radius=(8, 16))
        layouts[f"img{i}.png"] = GtImage(FULL, tuple(layout_annotations(cfg)))
    truth = GroundTruth(CLASSES, layouts)
    within = total = reps_all = 0
    for r in range(reps):
        dfile = DetectionFile()
        for key, img in layouts.items():
            rng = np.random.default_rng(derive_seed(r, "noise", key))
            dets = mock_detect(img.annotations, noise, FULL, rng=rng, n_classes=4)
            dfile.add(ImageDetections(key, FULL.width, FULL.height, tuple(dets)))
        rep = evaluate_run(truth, dfile)
        est = estimate_noise(rep, n_images)
        checks = [
            abs(est["drop_rate"] - drop) <= 3 * math.sqrt(drop * (1 - drop) / rep.gt_count),
            abs(est["fp_rate"] - fp_rate) <= 3 * math.sqrt(fp_rate / n_images),
        ]
        for c, row in enumerate(PLANTED):
            n = int(est["row_support"][c])
            for k, p in enumerate(row):
                checks.append(abs(est["confusion"][c, k] - p) <= 3 * math.sqrt(p * (1 - p) / n))
        within += sum(checks)
        total += len(checks)
        reps_all += all(checks)
    coverage = within / total
    return record(
        9, "planted-noise recovery", coverage >= 0.99,
        f"{reps} reps x {n_images * cells} cells, {within}/{total} estimates within 3 sigma ({coverage:.2%}); "
        f"all 18 estimates within in {reps_all}/{reps} reps",
    )


# ---------------------------------------------------------------- 10


def check_10() -> bool:
    rng = np.random.default_rng(10)
    box = to_norm(BBoxPx(0, 0, 10, 10), ImageMeta(672, 512))
    disagreements = 0
    for i in range(1000):
        n = int(rng.integers(0, 40))
        coarse = i % 2 == 0  # coarse confidences make count and sum ties common
        dets = [
            Detection(int(rng.integers(4)), box, float(rng.choice([0.25, 0.5, 0.75]) if coarse else rng.random()))
            for _ in range(n)
        ]
        which = rng.integers(0, 4, size=n)
        tiles = [[d for d, t in zip(dets, which) if t == k] for k in range(4)]
        vote = plate_vote_from_tiles(tiles, CLASSES)
        disagreements += vote != majority_vote(dets, CLASSES) or vote != majority_by_enumeration(dets)
    return record(10, "vote equivalence", disagreements == 0, f"1000 multisets, {disagreements} disagreements")


# ---------------------------------------------------------------- 11

TABLE_COUNTS = {"ER": 376, "Cytosol": 461, "Mitochondria": 660, "Nucleus": 1566}


def _bundle_bytes(records, seed: int, out: Path) -> dict:
    folds = make_folds(records, 5, seed)
    exp = Experiment("hygiene", CLASSES, tiles=True)
    digests = {}
    for f in range(5):
        write_dataset_bundle(exp, records, folds, f, out / f"fold{f}", "quadrants", 0.1, seed)
    for p in sorted(out.rglob("*")):
        if p.is_file():
            digests[str(p.relative_to(out))] = hashlib.sha256(p.read_bytes()).hexdigest()
    return digests


def check_11(seed: int = 11) -> bool:
    records = [PlateRecord(p, w, c, f"bf/{p}_{w}.tif", f"gfp/{p}_{w}.tif") for p, w, c in plan_wells(TABLE_COUNTS)]
    by_key = {r.key: r for r in records}
    folds = make_folds(records, 5, seed)
    problems = []
    if set(folds.folds) != set(by_key):
        problems.append("folds do not cover the manifest")
    for label in CLASSES:
        sizes = [sum(1 for k in folds.members(f) if by_key[k].class_label == label) for f in range(5)]
        if max(sizes) - min(sizes) > 1:
            problems.append(f"{label} fold sizes {sizes}")
    seen_test = []
    for f in range(5):
        train, valid, test = plan_splits(records, folds, f, 0.1, seed)
        seen_test += [r.key for r in test]
        for label in CLASSES:
            pool = sum(1 for r in train + valid if r.class_label == label)
            nv = sum(1 for r in valid if r.class_label == label)
            if nv != math.ceil(pool / 10) or nv != n_valid(pool, 0.1):
                problems.append(f"fold {f} {label}: valid {nv} of {pool}")
    if sorted(seen_test) != sorted(by_key) or len(set(seen_test)) != len(seen_test):
        problems.append("test folds not disjoint/covering")
    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        first = _bundle_bytes(records, seed, tmp / "a")
        second = _bundle_bytes(records, seed, tmp / "b")
        other = _bundle_bytes(records, seed + 1, tmp / "c")
        for f in range(5):
            owner: dict = {}
            tiles_seen: dict = {}
            for split in ("train", "valid", "test"):
                for line in (tmp / "a" / f"fold{f}" / f"{split}.txt").read_text().split():
                    plate, well, tile = parse_stem(Path(line).stem)
                    if owner.setdefault((plate, well), split) != split:
                        problems.append(f"fold {f}: plate{plate}_{well} in {owner[(plate, well)]} and {split}")
                    tiles_seen.setdefault((plate, well), set()).add(tile)
            if any(len(t) != 4 for t in tiles_seen.values()) or len(tiles_seen) != len(records):
                problems.append(f"fold {f}: incomplete tile sets")
    if first != second:
        problems.append("same seed gave different bundles")
    if first == other:
        problems.append("different seed gave identical bundles")
    detail = f"{len(records)} wells ({'/'.join(str(v) for v in TABLE_COUNTS.values())}), " + (
        "; ".join(problems[:3]) if problems else "disjoint, balanced, ceil(10%) valid, well-atomic, deterministic"
    )
    return record(11, "split hygiene", not problems, detail)


# ---------------------------------------------------------------- 12

CLI_CONFIG = """\
manifest = out/synth/manifest.csv
out = out
experiment = full
classes = ER, Cytosol, Mitochondria, Nucleus
synth_wells = 5, 5, 5, 5
synth_width = 320
synth_height = 256
synth_cells_min = 15
synth_cells_max = 25
synth_radius_min = 5
synth_radius_max = 10
detections = out/dets/{fold}.json
noise_drop = 0.05
noise_fp_rate = 0.5
noise_jitter = 1.0
noise_confusion = 0.9,0.05,0.03,0.02; 0.02,0.9,0.05,0.03; 0.03,0.02,0.9,0.05; 0.05,0.03,0.02,0.9
noise_spread = 0.1
overlay_count = 2
"""


def _cli_steps(root: Path) -> list[list[str]]:
    steps = [["synth"], ["merge"], ["import-masks"], ["tile"]]
    for exp, tiles in (("full", "false"), ("quad", "true")):
        common = ["--set", f"experiment={exp}", "--set", f"tiles={tiles}"]
        for f in range(5):
            steps.append(["build", "--fold", str(f), *common])
            steps.append(
                ["synth", "--mock-detect", str(root / f"out/datasets/{exp}/fold{f}/test.txt"),
                 "--detections-out", str(root / f"out/dets/{exp}{f}.json"), "--fold", str(f), *common]
            )
        dets = str(root / f"out/dets/{exp}{{fold}}.json")
        steps.append(["eval", "--fold", "1", "--detections", dets, *common])
        steps.append(["crossval", "--detections", dets, *common])
    return steps


def _tree(root: Path) -> dict:
    return {str(p.relative_to(root)): hashlib.sha256(p.read_bytes()).hexdigest() for p in sorted(root.rglob("*")) if p.is_file()}


def _cli(root: Path, step: list[str], hash_seed: str) -> int:
    env = dict(os.environ, PYTHONHASHSEED=hash_seed)
    cmd = [sys.executable, "-m", "yeastdet", step[0], "--config", str(root / "run.conf"), "-q", *step[1:]]
    return subprocess.run(cmd, cwd=root, env=env, capture_output=True).returncode


def check_12() -> bool:
    with tempfile.TemporaryDirectory() as tmp:
        root = Path(tmp)
        (root / "run.conf").write_text(CLI_CONFIG)
        steps = _cli_steps(root)
        codes = [_cli(root, s, "1") for s in steps]
        before = _tree(root / "out")
        changed = []
        for s in steps:
            if _cli(root, s, "2") != 0:
                changed.append(f"{s[0]} failed on rerun")
            elif _tree(root / "out") != before:
                changed.append(" ".join(s[:3]))
        ok = all(c == 0 for c in codes) and not changed
        names = sorted({s[0] for s in steps})
        detail = f"{len(steps)} invocations of {', '.join(names)} over {len(before)} files; " + (
            f"changed after: {changed[:3]}" if changed else "every rerun byte-identical"
        )
        if any(codes):
            detail += f"; first-run exit codes {codes}"
        return record(12, "CLI determinism", ok, detail)


# ---------------------------------------------------------------- pytest glue

CHECKS = [check_1, check_2, check_3, check_4, check_5, check_6, check_7, check_8, check_9, check_10, check_11, check_12]


@pytest.mark.acceptance
@pytest.mark.parametrize("check", CHECKS, ids=[f"criterion_{i}" for i in range(1, 13)])
def test_criterion(check):
    assert check()


if __name__ == "__main__":
    if len(sys.argv) == 3 and sys.argv[1] == "--emit-labels":
        sys.stdout.write(label_text(int(sys.argv[2]))[1])
        sys.exit(0)
    results = [c() for c in CHECKS]
    print(f"{sum(results)}/{len(results)} criteria passed")
    sys.exit(0 if all(results) else 1)
