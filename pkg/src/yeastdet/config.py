"""Flat ``key = value`` run configuration.

Blank lines and ``#`` comments are ignored. Relative paths in a config file
resolve against the file's directory; overrides given on the command line
resolve against the working directory.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .core import ClassSet

# Default class order, also the row/column order of confusion tables.
DEFAULT_CLASSES = ("ER", "Cytosol", "Mitochondria", "Nucleus")
PATH_KEYS = {"manifest", "mask_dir", "out", "detections"}


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    manifest: str = ""
    classes: tuple[str, ...] = DEFAULT_CLASSES
    experiment: str = "default"
    tiles: bool = False
    folds: int = 5
    fold: int = 0
    seed: int = 0
    valid_frac: float = 0.1
    out: str = "out"
    jobs: int = 1
    # pre-processing and ground truth import
    stretch: bool = True
    p_low: float = 1.0
    p_high: float = 99.0
    mask_dir: str = ""
    margin_frac: float = 0.02
    min_area_px: int = 9
    max_area_frac: float = 0.25
    clip: bool = False
    # evaluation
    iou_thresh: float = 0.5
    detections: str = ""
    strip_prefix: str = ""
    allow_missing: bool = False
    overlay_count: int = 4
    overlay_images: tuple[str, ...] = ()
    train_time: str = ""
    train_map: str = ""
    train_avg_loss: str = ""
    # synthetic data
    synth_classes: tuple[str, ...] = DEFAULT_CLASSES
    synth_wells: tuple[int, ...] = (5, 5, 5, 5)
    synth_width: int = 1344
    synth_height: int = 1024
    synth_cells_min: int = 80
    synth_cells_max: int = 120
    synth_radius_min: int = 10
    synth_radius_max: int = 20
    synth_max_overlap: float = 0.0
    # mock detector
    noise_drop: float = 0.0
    noise_fp_rate: float = 0.0
    noise_jitter: float = 0.0
    noise_confusion: tuple[tuple[float, ...], ...] = ()
    noise_correct_mean: float = 1.0
    noise_error_mean: float = 0.5
    noise_spread: float = 0.0

    _sources: dict = field(default_factory=dict, repr=False)

    @property
    def class_set(self) -> ClassSet:
        return ClassSet(self.classes)

    def training_info(self) -> dict:
        info = {"time": self.train_time, "map": self.train_map, "avg_loss": self.train_avg_loss}
        return {k: v for k, v in info.items() if v}

    def validate(self) -> None:
        try:
            ClassSet(self.classes)
        except ValueError as exc:
            raise ConfigError(f"classes: {exc}") from None
        if self.folds < 2:
            raise ConfigError("folds must be >= 2")
        if not 0 <= self.fold < self.folds:
            raise ConfigError(f"fold must be in 0..{self.folds - 1}")
        if not 0 < self.valid_frac < 1:
            raise ConfigError("valid_frac must be in (0, 1)")
        if not 0 < self.iou_thresh <= 1:
            raise ConfigError("iou_thresh must be in (0, 1]")
        if not 0 <= self.p_low < self.p_high <= 100:
            raise ConfigError("need 0 <= p_low < p_high <= 100")
        if self.jobs < 1:
            raise ConfigError("jobs must be >= 1")
        if len(self.synth_wells) != len(self.synth_classes):
            raise ConfigError("synth_wells needs one count per synth class")


_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig) if not f.name.startswith("_")}


def _parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _convert(name: str, raw: str):
    default = _FIELDS[name].default
    if name == "noise_confusion":
        rows = [r for r in raw.split(";") if r.strip()]
        return tuple(tuple(float(v) for v in r.split(",")) for r in rows)
    if isinstance(default, bool):
        return _parse_bool(raw)
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    if isinstance(default, tuple):
        items = [v.strip() for v in raw.split(",") if v.strip()]
        if name == "synth_wells":
            return tuple(int(v) for v in items)
        return tuple(items)
    return raw.strip()


def apply(cfg: RunConfig, key: str, raw: str, base: Optional[Path] = None, origin: str = "") -> None:
    key = key.strip().replace("-", "_")
    if key not in _FIELDS:
        raise ConfigError(f"{origin}unknown config key {key!r}")
    try:
        value = _convert(key, raw)
    except ValueError as exc:
        raise ConfigError(f"{origin}{key}: {exc}") from None
    if key in PATH_KEYS and value and base is not None and not Path(value).is_absolute():
        value = str(base / value)
    setattr(cfg, key, value)
    cfg._sources[key] = origin or "override"


def load_config(path=None, overrides: Optional[dict] = None) -> RunConfig:
    cfg = RunConfig()
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        for line_no, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{line_no}: expected 'key = value'")
            key, value = line.split("=", 1)
            apply(cfg, key, value, base=path.parent, origin=f"{path}:{line_no}: ")
    for key, value in (overrides or {}).items():
        apply(cfg, key, str(value), base=Path.cwd())
    cfg.validate()
    return cfg
