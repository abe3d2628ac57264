"""Command line entry point: ``yeastdet <subcommand> --config run.conf``.

Output layout under the output root::

    full/plate{P}_{WELL}.png   composites (+ .txt labels from import-masks)
    quadrants/plate{P}_{WELL}_{TILE}.png (+ .txt)
    stats/                     merge, import and tiling accounting
    datasets/<experiment>/fold{i}/   obj.names, obj.data, train/valid/test.txt
    eval/<experiment>/fold{i}/       report.json, tables, summary, overlays
    eval/<experiment>/crossval/      per-fold table with AVG row
    synth/                     synthetic manifest, channels, masks, planted truth
"""

from __future__ import annotations

import argparse
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Callable, Iterable, Optional

import numpy as np
from PIL import Image

from . import __version__
from .config import ConfigError, RunConfig, load_config
from .core import BoxError, ClassSet, ImageMeta, PlateRecord
from .datasetgen import (
    Experiment,
    LabelFormatError,
    make_folds,
    read_label_file,
    read_list_file,
    select_records,
    write_dataset_bundle,
    write_label_file,
)
from .detadapt import DetectionFile, DetectionFormatError, ImageDetections, normalize_path, read_detections, write_detections
from .evalkit import EvalConfig, EvalError, GroundTruth, GtImage, evaluate_run
from .ingest import ManifestError, composite, image_stem, load_manifest, parse_stem, read_gray, write_manifest, write_png
from .maskimport import mask_to_annotations
from .report import dump_json, fold_table, render_overlay, summary_text, write_report
from .synth import NoiseConfig, SynthConfig, derive_seed, gen_plate, mock_detect, plan_wells, synth_record, write_plate_files
from .tiler import TILE_ORDER, crop, quadrants, split_annotations

log = logging.getLogger("yeastdet")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_VALIDATION = 4


class DataError(RuntimeError):
    """Input data missing or unreadable."""


class ValidationError(RuntimeError):
    """Inputs readable but inconsistent (class sets, leakage, schema)."""


def pmap(fn: Callable, items: list, jobs: int) -> Iterable:
    """Ordered map, in a process pool when ``jobs > 1``."""
    if jobs <= 1 or len(items) <= 1:
        return map(fn, items)
    pool = ProcessPoolExecutor(max_workers=jobs)

    def gen():
        with pool:
            yield from pool.map(fn, items, chunksize=max(1, len(items) // (4 * jobs)))

    return gen()


def image_size(path) -> tuple[int, int]:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"image not found: {path}")
    if path.suffix.lower() in (".tif", ".tiff"):
        arr = read_gray(path)
        return arr.shape[1], arr.shape[0]
    with Image.open(path) as im:
        return im.size


def _records(cfg: RunConfig) -> list[PlateRecord]:
    if not cfg.manifest:
        raise ConfigError("no manifest configured (set 'manifest')")
    if not Path(cfg.manifest).is_file():
        raise DataError(f"manifest not found: {cfg.manifest}")
    records = load_manifest(cfg.manifest)
    try:
        return select_records(records, cfg.class_set)
    except ValueError as exc:
        raise ValidationError(str(exc)) from None


def _write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8", newline="\n")


# ---------------------------------------------------------------- merge


def _merge_one(task):
    rec, dest, stretch, p_low, p_high = task
    try:
        rgb = composite(rec, stretch, p_low, p_high)
    except (OSError, ValueError) as exc:
        raise DataError(f"plate {rec.plate_id} well {rec.well}: {exc}") from None
    write_png(rgb, dest)
    return rgb.shape[1], rgb.shape[0]


def cmd_merge(cfg: RunConfig, args) -> int:
    out = Path(cfg.out)
    records = _records(cfg)
    tasks = [
        (r, out / "full" / f"{image_stem(r.plate_id, r.well)}.png", cfg.stretch, cfg.p_low, cfg.p_high)
        for r in records
    ]
    sizes: dict[str, int] = {}
    for i, (rec, (w, h)) in enumerate(zip(records, pmap(_merge_one, tasks, cfg.jobs)), start=1):
        log.info("[%d/%d] merged %s", i, len(records), image_stem(rec.plate_id, rec.well))
        sizes[f"{w}x{h}"] = sizes.get(f"{w}x{h}", 0) + 1
    dump_json({"composites": len(records), "sizes": sizes, "stretch": cfg.stretch}, out / "stats" / "merge.json")
    print(f"merged {len(records)} composite(s) into {out / 'full'}")
    return EXIT_OK


# ---------------------------------------------------------------- import-masks


def find_mask(mask_dir: Path, stem: str) -> Optional[Path]:
    for ext in (".png", ".tif", ".tiff"):
        p = mask_dir / f"{stem}{ext}"
        if p.is_file():
            return p
    return None


def _import_one(task):
    rec, mask_path, dest, class_id, margin, min_area, max_frac = task
    stem = image_stem(rec.plate_id, rec.well)
    try:
        mask = read_gray(mask_path)
        w, h = image_size(rec.bf_path)
    except (OSError, ValueError) as exc:
        raise DataError(f"{stem}: {exc}") from None
    meta = ImageMeta(w, h, rec.plate_id, rec.well)
    try:
        annos, stats = mask_to_annotations(mask, class_id, meta, margin, min_area, max_frac)
    except ValueError as exc:
        raise ValidationError(f"{stem}: {exc}") from None
    _write_text(dest, write_label_file(annos))
    return stats.as_dict()


def cmd_import_masks(cfg: RunConfig, args) -> int:
    out = Path(cfg.out)
    records = _records(cfg)
    mask_dir = Path(cfg.mask_dir) if cfg.mask_dir else Path(cfg.manifest).parent / "masks"
    classes = cfg.class_set
    tasks, missing = [], []
    for r in records:
        stem = image_stem(r.plate_id, r.well)
        mask_path = find_mask(mask_dir, stem)
        if mask_path is None:
            missing.append(stem)
            log.error("no mask for %s in %s; skipped", stem, mask_dir)
            continue
        tasks.append(
            (r, mask_path, out / "full" / f"{stem}.txt", classes.id_of(r.class_label),
             cfg.margin_frac, cfg.min_area_px, cfg.max_area_frac)
        )
    per_image = {}
    for i, (task, stats) in enumerate(zip(tasks, pmap(_import_one, tasks, cfg.jobs)), start=1):
        stem = image_stem(task[0].plate_id, task[0].well)
        per_image[stem] = stats
        log.info("[%d/%d] %s: %d cell(s)", i, len(tasks), stem, stats["kept"])
    totals = {k: sum(s[k] for s in per_image.values()) for k in ("instances", "kept", "dropped_too_small", "dropped_too_large")}
    dump_json(
        {"images": per_image, "totals": totals, "missing_masks": missing,
         "params": {"margin_frac": cfg.margin_frac, "min_area_px": cfg.min_area_px, "max_area_frac": cfg.max_area_frac}},
        out / "stats" / "import_masks.json",
    )
    print(f"imported {len(per_image)} mask(s): {totals['kept']} cells kept of {totals['instances']} instances")
    if missing:
        print(f"missing masks for {len(missing)} image(s): {', '.join(missing[:10])}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


# ---------------------------------------------------------------- tile


def _tile_one(task):
    rec, full_dir, quad_dir, n_classes, clip = task
    stem = image_stem(rec.plate_id, rec.well)
    img_path, lbl_path = full_dir / f"{stem}.png", full_dir / f"{stem}.txt"
    if not img_path.is_file() or not lbl_path.is_file():
        raise DataError(f"{stem}: composite or label file missing (run merge and import-masks first)")
    with Image.open(img_path) as im:
        rgb = np.array(im)
    meta = ImageMeta(rgb.shape[1], rgb.shape[0], rec.plate_id, rec.well)
    try:
        annos = read_label_file(lbl_path.read_text(encoding="utf-8"), n_classes)
        result = split_annotations(annos, meta, clip=clip)
        specs = quadrants(meta)
    except LabelFormatError as exc:
        raise ValidationError(f"{lbl_path}: {exc}") from None
    except ValueError as exc:
        raise ValidationError(f"{stem}: {exc}") from None
    for spec in specs:
        tstem = image_stem(rec.plate_id, rec.well, spec.tag)
        write_png(crop(rgb, spec), quad_dir / f"{tstem}.png")
        _write_text(quad_dir / f"{tstem}.txt", write_label_file(result.tiles[spec.tag]))
    return {
        "full": result.total,
        "per_tile": {t.value: len(result.tiles[t]) for t in TILE_ORDER},
        "quadrants": result.kept,
        "straddling_dropped": result.straddling,
        "clipped": result.clipped,
    }


def cmd_tile(cfg: RunConfig, args) -> int:
    out = Path(cfg.out)
    records = _records(cfg)
    tasks = [(r, out / "full", out / "quadrants", len(cfg.classes), cfg.clip) for r in records]
    per_image = {}
    for i, (rec, stats) in enumerate(zip(records, pmap(_tile_one, tasks, cfg.jobs)), start=1):
        stem = image_stem(rec.plate_id, rec.well)
        per_image[stem] = stats
        log.info("[%d/%d] %s: %d -> %d cells", i, len(records), stem, stats["full"], stats["quadrants"])
    totals = {k: sum(s[k] for s in per_image.values()) for k in ("full", "quadrants", "straddling_dropped", "clipped")}
    if not cfg.clip and totals["quadrants"] + totals["straddling_dropped"] != totals["full"]:
        raise ValidationError("tiling accounting does not add up")
    dump_json({"images": per_image, "totals": totals, "clip": cfg.clip}, out / "stats" / "tiling.json")
    print(
        f"tiled {len(records)} image(s): {totals['full']} cells full-size, {totals['quadrants']} in quadrants, "
        f"{totals['straddling_dropped']} dropped on cut lines"
    )
    return EXIT_OK


# ---------------------------------------------------------------- build


def bundle_dir(cfg: RunConfig, fold: int) -> tuple[Path, str]:
    rel = f"datasets/{cfg.experiment}/fold{fold}"
    return Path(cfg.out) / rel, rel


def build_fold(cfg: RunConfig, records: list[PlateRecord], fold: int) -> dict:
    exp = Experiment(cfg.experiment, cfg.class_set, cfg.tiles)
    try:
        folds = make_folds(records, cfg.folds, cfg.seed)
    except ValueError as exc:
        raise ValidationError(str(exc)) from None
    out_dir, rel = bundle_dir(cfg, fold)
    lists = write_dataset_bundle(
        exp, records, folds, fold, out_dir,
        image_dir="quadrants" if cfg.tiles else "full",
        valid_frac=cfg.valid_frac, seed=cfg.seed, path_prefix=rel,
    )
    # Leakage check: a well may appear in one split only.
    owner: dict[tuple[int, str], str] = {}
    for split, entries in (("train", lists.train), ("valid", lists.valid), ("test", lists.test)):
        for e in entries:
            plate, well, _ = parse_stem(Path(e).stem)
            if owner.setdefault((plate, well), split) != split:
                raise ValidationError(f"well plate{plate}_{well} appears in both {owner[(plate, well)]} and {split}")
    assign = "".join(
        f"{r.plate_id},{r.well},{r.class_label},{folds.folds[r.key]}\n" for r in sorted(records, key=lambda r: r.key)
    )
    _write_text(Path(cfg.out) / "datasets" / cfg.experiment / "folds.csv", "plate,well,class,fold\n" + assign)
    missing = [e for e in lists.train + lists.valid + lists.test if not (Path(cfg.out) / e).is_file()]
    if missing:
        log.warning("%d listed image(s) do not exist yet, e.g. %s", len(missing), missing[0])
    return {"train": len(lists.train), "valid": len(lists.valid), "test": len(lists.test)}


def cmd_build(cfg: RunConfig, args) -> int:
    records = _records(cfg)
    sizes = build_fold(cfg, records, cfg.fold)
    print(
        f"{cfg.experiment} fold {cfg.fold}: train {sizes['train']}, valid {sizes['valid']}, test {sizes['test']} "
        f"({'quadrants' if cfg.tiles else 'full-size'})"
    )
    return EXIT_OK


# ---------------------------------------------------------------- eval


def load_ground_truth(cfg: RunConfig, fold: int, records: list[PlateRecord]) -> tuple[GroundTruth, list[str]]:
    out = Path(cfg.out)
    bdir, _ = bundle_dir(cfg, fold)
    if not (bdir / "test.txt").is_file():
        raise DataError(f"no dataset bundle at {bdir} (run build first)")
    class_set = ClassSet.from_text((bdir / "obj.names").read_text(encoding="utf-8"))
    if tuple(class_set) != tuple(cfg.classes):
        raise ValidationError(f"class set mismatch: bundle {list(class_set)} vs config {list(cfg.classes)}")
    well_class = {r.key: class_set.id_of(r.class_label) for r in records}
    entries = read_list_file(bdir / "test.txt")
    images = {}
    for e in entries:
        key = normalize_path(e)
        img = out / e
        w, h = image_size(img)
        plate, well, tile = parse_stem(img.stem)
        lbl = img.with_suffix(".txt")
        if not lbl.is_file():
            raise DataError(f"label file missing: {lbl}")
        try:
            annos = read_label_file(lbl.read_text(encoding="utf-8"), len(class_set))
        except LabelFormatError as exc:
            raise ValidationError(f"{lbl}: {exc}") from None
        images[key] = GtImage(ImageMeta(w, h, plate, well, tile), tuple(annos), well_class.get((plate, well)))
    return GroundTruth(class_set, images), entries


def _detections_path(cfg: RunConfig, fold: int) -> Path:
    if not cfg.detections:
        raise ConfigError("no detections file configured (set 'detections' or pass --detections)")
    return Path(cfg.detections.replace("{fold}", str(fold)))


def eval_fold(cfg: RunConfig, fold: int, records: list[PlateRecord]):
    gt, entries = load_ground_truth(cfg, fold, records)
    det_path = _detections_path(cfg, fold)
    if not det_path.is_file():
        raise DataError(f"detections file not found: {det_path}")
    try:
        dfile = read_detections(det_path, gt.class_set, cfg.strip_prefix)
    except DetectionFormatError as exc:
        raise ValidationError(f"{det_path}: {exc}") from None
    eval_dir = Path(cfg.out) / "eval" / cfg.experiment / f"fold{fold}"
    missing = sorted(p for p in gt.images if dfile.get(p) is None)
    if missing and not cfg.allow_missing:
        dump_json({"missing_images": missing, "detections": str(det_path)}, eval_dir / "errors.json")
        raise DataError(f"{len(missing)} test image(s) have no detection entry; listed in {eval_dir / 'errors.json'}")
    report = evaluate_run(gt, dfile, EvalConfig(cfg.iou_thresh, cfg.allow_missing, cfg.class_set), cfg.training_info())
    write_report(report, eval_dir, title=f"{cfg.experiment} fold {fold}")
    _render_overlays(cfg, entries, dfile, gt.class_set, eval_dir / "overlays")
    return report, eval_dir


def _render_overlays(cfg: RunConfig, entries: list[str], dfile: DetectionFile, class_set: ClassSet, dest: Path) -> None:
    if cfg.overlay_images:
        chosen = [normalize_path(e) for e in cfg.overlay_images]
    elif cfg.overlay_count > 0 and entries:
        rng = np.random.default_rng(derive_seed(cfg.seed, "overlay"))
        idx = sorted(rng.choice(len(entries), size=min(cfg.overlay_count, len(entries)), replace=False).tolist())
        chosen = [normalize_path(entries[i]) for i in idx]
    else:
        return
    for key in chosen:
        img = Path(cfg.out) / key
        if not img.is_file():
            log.warning("overlay image not found: %s", img)
            continue
        with Image.open(img) as im:
            rgb = np.array(im.convert("RGB"))
        entry = dfile.get(key)
        write_png(render_overlay(rgb, entry.detections if entry else (), class_set), dest / Path(key).name)


def cmd_eval(cfg: RunConfig, args) -> int:
    records = _records(cfg)
    report, eval_dir = eval_fold(cfg, cfg.fold, records)
    sys.stdout.write(summary_text(report, f"{cfg.experiment} fold {cfg.fold}"))
    print(f"report written to {eval_dir}")
    return EXIT_OK


def cmd_crossval(cfg: RunConfig, args) -> int:
    records = _records(cfg)
    reports = []
    for fold in range(cfg.folds):
        build_fold(cfg, records, fold)
        report, _ = eval_fold(cfg, fold, records)
        reports.append(report)
        log.info("fold %d: accuracy %s", fold, report.classification.accuracy)
    table, data = fold_table(reports)
    cv_dir = Path(cfg.out) / "eval" / cfg.experiment / "crossval"
    _write_text(cv_dir / "folds.csv", table)
    dump_json(data, cv_dir / "crossval.json")
    sys.stdout.write(table)
    return EXIT_OK


# ---------------------------------------------------------------- synth


def _synth_one(task):
    plate, well, class_id, label, scfg_kwargs, root = task
    stem = image_stem(plate, well)
    seed = int(derive_seed(scfg_kwargs.pop("seed"), plate, well).generate_state(1)[0])
    scfg = SynthConfig(seed=seed, class_label=label, class_id=class_id, **scfg_kwargs)
    p = gen_plate(scfg)
    write_plate_files(p, root, stem)
    return len(p.annotations)


def noise_config(cfg: RunConfig) -> NoiseConfig:
    return NoiseConfig(
        jitter_sigma_px=cfg.noise_jitter,
        drop_prob=cfg.noise_drop,
        false_positive_rate=cfg.noise_fp_rate,
        class_confusion=cfg.noise_confusion or None,
        correct_mean=cfg.noise_correct_mean,
        error_mean=cfg.noise_error_mean,
        spread=cfg.noise_spread,
        seed=cfg.seed,
    )


def mock_detect_list(cfg: RunConfig, list_path: Path, dest: Path) -> DetectionFile:
    out = Path(cfg.out)
    noise = noise_config(cfg)
    n_cls = len(cfg.classes)
    if noise.class_confusion is not None and len(noise.class_confusion) != n_cls:
        raise ConfigError(f"noise_confusion is {len(noise.class_confusion)}x{len(noise.class_confusion)}, need {n_cls}x{n_cls}")
    dfile = DetectionFile()
    for e in read_list_file(list_path):
        key = normalize_path(e)
        img = out / key
        w, h = image_size(img)
        lbl = img.with_suffix(".txt")
        if not lbl.is_file():
            raise DataError(f"label file missing: {lbl}")
        annos = read_label_file(lbl.read_text(encoding="utf-8"), n_cls)
        rng = np.random.default_rng(derive_seed(cfg.seed, "mock", key))
        dets = mock_detect(annos, noise, ImageMeta(w, h), rng=rng, n_classes=n_cls)
        dfile.add(ImageDetections(key, w, h, tuple(dets)))
    write_detections(dfile, dest)
    return dfile


def cmd_synth(cfg: RunConfig, args) -> int:
    out = Path(cfg.out)
    if args.mock_detect:
        dest = Path(args.detections_out or _detections_path(cfg, cfg.fold))
        dfile = mock_detect_list(cfg, Path(args.mock_detect), dest)
        n = sum(len(e.detections) for e in dfile.entries.values())
        print(f"mock detections for {len(dfile)} image(s), {n} box(es) -> {dest}")
        return EXIT_OK
    root = out / "synth"
    plan = plan_wells(dict(zip(cfg.synth_classes, cfg.synth_wells)))
    base = dict(
        seed=cfg.seed,
        width=cfg.synth_width,
        height=cfg.synth_height,
        n_cells=(cfg.synth_cells_min, cfg.synth_cells_max),
        radius=(cfg.synth_radius_min, cfg.synth_radius_max),
        max_overlap=cfg.synth_max_overlap,
    )
    synth_classes = ClassSet(cfg.synth_classes)
    tasks = [(p, w, synth_classes.id_of(c), c, dict(base), root) for p, w, c in plan]
    total = 0
    for i, (task, n) in enumerate(zip(tasks, pmap(_synth_one, tasks, cfg.jobs)), start=1):
        total += n
        log.info("[%d/%d] synth %s: %d cells", i, len(tasks), image_stem(task[0], task[1]), n)
    write_manifest([synth_record(p, w, c) for p, w, c in plan], root / "manifest.csv")
    print(f"generated {len(plan)} synthetic well(s), {total} planted cells, manifest {root / 'manifest.csv'}")
    return EXIT_OK


# ---------------------------------------------------------------- entry point

COMMANDS = {
    "merge": (cmd_merge, "merge BF and GFP channels into RGB composites"),
    "import-masks": (cmd_import_masks, "convert instance masks into label files"),
    "tile": (cmd_tile, "split composites and labels into quadrants"),
    "build": (cmd_build, "write a dataset bundle for one experiment fold"),
    "eval": (cmd_eval, "evaluate a detections file against a bundle's test split"),
    "crossval": (cmd_crossval, "evaluate every fold and average the metrics"),
    "synth": (cmd_synth, "generate synthetic plates or mock detections"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="yeastdet", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (fn, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="flat key = value config file")
        p.add_argument("--seed", type=int)
        p.add_argument("--jobs", type=int)
        p.add_argument("--out", help="output root")
        p.add_argument("--fold", type=int)
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override any config key")
        p.add_argument("-q", "--quiet", action="store_true", help="no per-image progress")
        if name in ("eval", "crossval"):
            p.add_argument("--detections", help="detections JSON ({fold} is replaced by the fold index)")
        if name == "tile":
            p.add_argument("--clip", action="store_true", help="clip straddling boxes instead of dropping them")
        if name == "synth":
            p.add_argument("--mock-detect", metavar="LIST", help="write mock detections for the images in LIST")
            p.add_argument("--detections-out", metavar="PATH")
        p.set_defaults(func=fn)
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING if args.quiet else logging.INFO,
        format="%(levelname)s %(message)s",
        stream=sys.stderr,
    )
    overrides = {}
    for item in args.set:
        if "=" not in item:
            print(f"error: --set expects KEY=VALUE, got {item!r}", file=sys.stderr)
            return EXIT_CONFIG
        k, v = item.split("=", 1)
        overrides[k] = v
    for key in ("seed", "jobs", "out", "fold", "detections"):
        value = getattr(args, key, None)
        if value is not None:
            overrides[key] = value
    if getattr(args, "clip", False):
        overrides["clip"] = "true"
    try:
        cfg = load_config(args.config, overrides)
        return args.func(cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, ManifestError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ValidationError, LabelFormatError, DetectionFormatError, EvalError, BoxError) as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
