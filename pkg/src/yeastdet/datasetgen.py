"""Darknet-style training files and stratified cross-validation splits.

The split unit is the well: all quadrants of one image always land in the
same split as their parent, so near-duplicate tiles never leak between
train and test.
"""

from __future__ import annotations

import math
import zlib
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .core import Annotation, ClassSet, NormBBox, PlateRecord
from .ingest import image_stem
from .tiler import TILE_ORDER

WellKey = tuple[int, str]


class LabelFormatError(ValueError):
    """A darknet label line could not be parsed or violates box invariants."""


@dataclass(frozen=True)
class FoldAssignment:
    k: int
    folds: dict  # WellKey -> fold index

    def members(self, fold: int) -> list[WellKey]:
        return sorted(key for key, f in self.folds.items() if f == fold)

    def sizes(self) -> list[int]:
        out = [0] * self.k
        for f in self.folds.values():
            out[f] += 1
        return out


@dataclass(frozen=True)
class SplitLists:
    train: list[str]
    valid: list[str]
    test: list[str]

    def check(self) -> None:
        tr, va, te = set(self.train), set(self.valid), set(self.test)
        if tr & va or tr & te or va & te:
            raise AssertionError("train/valid/test lists overlap")


def _class_rng(seed: int, label: str, salt: int) -> np.random.Generator:
    # Per-class streams: a class's shuffle does not depend on which other classes exist.
    return np.random.default_rng(np.random.SeedSequence([seed, salt, zlib.crc32(label.encode())]))


def _by_class(records: Iterable[PlateRecord]) -> dict[str, list[PlateRecord]]:
    groups: dict[str, list[PlateRecord]] = defaultdict(list)
    for r in records:
        groups[r.class_label].append(r)
    return {label: sorted(groups[label], key=lambda r: r.key) for label in sorted(groups)}


def make_folds(records: Sequence[PlateRecord], k: int = 5, seed: int = 0) -> FoldAssignment:
    """Stratified k-fold assignment of wells.

    Within each class the wells, sorted by (plate, well), are shuffled with a
    seeded per-class generator and dealt round-robin to the folds. The deal
    for each class starts at a fold derived from the class name so that
    remainders spread over folds instead of piling up in fold 0.
    """
    if k < 2:
        raise ValueError(f"need k >= 2 folds, got {k}")
    keys = [r.key for r in records]
    if len(set(keys)) != len(keys):
        raise ValueError("duplicate (plate, well) in records")
    folds: dict[WellKey, int] = {}
    for label, group in _by_class(records).items():
        if len(group) < k:
            raise ValueError(f"class {label!r} has {len(group)} records, fewer than k={k} folds")
        order = _class_rng(seed, label, 0).permutation(len(group))
        start = zlib.crc32(label.encode()) % k
        for pos, idx in enumerate(order):
            folds[group[idx].key] = (start + pos) % k
    return FoldAssignment(k, folds)


def n_valid(n: int, frac: float) -> int:
    """ceil(frac * n), robust to binary rounding (0.1 * 90 must give 9)."""
    return math.ceil(round(frac * n, 9))


def split_train_valid(
    train_records: Sequence[PlateRecord], frac: float = 0.1, seed: int = 0
) -> tuple[list[PlateRecord], list[PlateRecord]]:
    """Move ceil(frac * n) wells of each class from train to validation."""
    if not 0 < frac < 1:
        raise ValueError(f"validation fraction must be in (0, 1), got {frac}")
    train, valid = [], []
    for label, group in _by_class(train_records).items():
        nv = n_valid(len(group), frac)
        if nv >= len(group):
            raise ValueError(f"class {label!r}: {len(group)} record(s) leave no training data after the split")
        order = _class_rng(seed, label, 1).permutation(len(group))
        chosen = set(order[:nv].tolist())
        for i, r in enumerate(group):
            (valid if i in chosen else train).append(r)
    train.sort(key=lambda r: r.key)
    valid.sort(key=lambda r: r.key)
    return train, valid


def write_label_file(annos: Iterable[Annotation]) -> str:
    """Darknet label text: ``<class> <cx> <cy> <w> <h>`` per line, 6 decimals."""
    return "".join(
        f"{a.class_id} {a.box.cx:.6f} {a.box.cy:.6f} {a.box.w:.6f} {a.box.h:.6f}\n" for a in annos
    )


def read_label_file(text: str, class_count: int) -> list[Annotation]:
    out = []
    for line_no, line in enumerate(text.splitlines(), start=1):
        fields = line.split()
        if not fields:
            continue
        if len(fields) != 5:
            raise LabelFormatError(f"line {line_no}: expected 5 fields, got {len(fields)}")
        try:
            cid = int(fields[0])
            cx, cy, w, h = (float(f) for f in fields[1:])
        except ValueError:
            raise LabelFormatError(f"line {line_no}: malformed number in {line.strip()!r}") from None
        if not 0 <= cid < class_count:
            raise LabelFormatError(f"line {line_no}: class id {cid} outside 0..{class_count - 1}")
        if not all(map(math.isfinite, (cx, cy, w, h))):
            raise LabelFormatError(f"line {line_no}: non-finite box value")
        try:
            out.append(Annotation(cid, NormBBox(cx, cy, w, h)))
        except ValueError as exc:
            raise LabelFormatError(f"line {line_no}: {exc}") from None
    return out


@dataclass(frozen=True)
class Experiment:
    """One row of the experiment table: which classes, and full images or quadrants."""

    name: str
    classes: ClassSet
    tiles: bool


def image_entries(record: PlateRecord, tiles: bool, image_dir: str) -> list[str]:
    if tiles:
        return [f"{image_dir}/{image_stem(record.plate_id, record.well, t)}.png" for t in TILE_ORDER]
    return [f"{image_dir}/{image_stem(record.plate_id, record.well)}.png"]


def select_records(records: Sequence[PlateRecord], classes: ClassSet) -> list[PlateRecord]:
    present = {r.class_label for r in records}
    missing = [c for c in classes if c not in present]
    if missing:
        raise ValueError(f"experiment classes not in manifest: {', '.join(missing)}")
    return [r for r in records if r.class_label in classes]


def plan_splits(
    records: Sequence[PlateRecord],
    folds: FoldAssignment,
    fold_index: int,
    valid_frac: float = 0.1,
    seed: int = 0,
) -> tuple[list[PlateRecord], list[PlateRecord], list[PlateRecord]]:
    """Wells for (train, valid, test): test is the chosen fold, valid a carve-out of the rest."""
    if not 0 <= fold_index < folds.k:
        raise ValueError(f"fold index {fold_index} outside 0..{folds.k - 1}")
    unassigned = [r.key for r in records if r.key not in folds.folds]
    if unassigned:
        raise ValueError(f"{len(unassigned)} well(s) have no fold assignment, e.g. {unassigned[0]}")
    test = sorted((r for r in records if folds.folds[r.key] == fold_index), key=lambda r: r.key)
    rest = [r for r in records if folds.folds[r.key] != fold_index]
    train, valid = split_train_valid(rest, valid_frac, seed)
    return train, valid, test


def write_dataset_bundle(
    experiment: Experiment,
    records: Sequence[PlateRecord],
    folds: FoldAssignment,
    fold_index: int,
    out_dir,
    image_dir: str,
    valid_frac: float = 0.1,
    seed: int = 0,
    path_prefix: str = "",
) -> SplitLists:
    """Materialize names/data/list files for one experiment fold.

    ``image_dir`` is the directory prefix written into list entries
    (relative to the output root unless absolute); ``path_prefix`` is
    prepended to the list-file paths written into the data file.
    """
    records = select_records(records, experiment.classes)
    train, valid, test = plan_splits(records, folds, fold_index, valid_frac, seed)
    lists = SplitLists(
        train=[e for r in train for e in image_entries(r, experiment.tiles, image_dir)],
        valid=[e for r in valid for e in image_entries(r, experiment.tiles, image_dir)],
        test=[e for r in test for e in image_entries(r, experiment.tiles, image_dir)],
    )
    lists.check()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = {
        "obj.names": experiment.classes.to_text(),
        "train.txt": "".join(f"{p}\n" for p in lists.train),
        "valid.txt": "".join(f"{p}\n" for p in lists.valid),
        "test.txt": "".join(f"{p}\n" for p in lists.test),
    }
    prefix = f"{path_prefix}/" if path_prefix else ""
    files["obj.data"] = (
        f"classes={len(experiment.classes)}\n"
        f"train={prefix}train.txt\n"
        f"valid={prefix}valid.txt\n"
        f"names={prefix}obj.names\n"
    )
    for name, text in files.items():
        (out / name).write_text(text, encoding="utf-8", newline="\n")
    return lists


def read_list_file(path) -> list[str]:
    return [line.strip() for line in Path(path).read_text(encoding="utf-8").splitlines() if line.strip()]
