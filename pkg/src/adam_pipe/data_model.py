"""Dataset schema, manifest CSV ingestion and class oversampling."""

from __future__ import annotations

import csv
import enum
import math
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np
from PIL import Image

from .errors import DataError

MANIFEST_COLUMNS = (
    "id", "image", "amd", "od_mask", "fovea_x", "fovea_y",
    "drusen_mask", "exudate_mask", "hemorrhage_mask", "scar_mask", "other_mask",
)
SPLITS = ("train", "val", "test")


class LesionKind(str, enum.Enum):
    DRUSEN = "drusen"
    EXUDATE = "exudate"
    HEMORRHAGE = "hemorrhage"
    SCAR = "scar"
    OTHER = "other"

    @property
    def column(self) -> str:
        return f"{self.value}_mask"


@dataclass(frozen=True)
class FoveaCoordinate:
    """Fovea location in pixels; ``x`` is the column, ``y`` the row."""

    x: float
    y: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValueError(f"fovea coordinate must be finite, got ({self.x}, {self.y})")
        if self.x < 0 or self.y < 0:
            raise ValueError(f"fovea coordinate must be non-negative, got ({self.x}, {self.y})")

    def as_tuple(self) -> tuple[float, float]:
        return (self.x, self.y)


@dataclass(frozen=True)
class ManifestEntry:
    id: str
    image: Path
    amd: Optional[int] = None
    od_mask: Optional[Path] = None
    fovea: Optional[FoveaCoordinate] = None
    lesion_masks: dict = field(default_factory=dict)
    replica: int = 0

    def __hash__(self):
        return hash((self.id, self.replica))


@dataclass
class DatasetManifest:
    entries: list
    split: str = "train"
    root: Optional[Path] = None

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def class_counts(self) -> dict:
        labels = [e.amd for e in self.entries if e.amd is not None]
        return {"AMD": sum(1 for v in labels if v == 1), "non-AMD": sum(1 for v in labels if v == 0)}

    def by_id(self) -> dict:
        return {e.id: e for e in self.entries if e.replica == 0}


@dataclass
class FundusSample:
    id: str
    image: np.ndarray
    amd_label: Optional[int] = None
    od_mask: Optional[np.ndarray] = None
    fovea: Optional[FoveaCoordinate] = None
    lesion_masks: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.image.ndim != 3 or self.image.shape[2] != 3 or self.image.dtype != np.uint8:
            raise DataError(f"{self.id}: image must be an 8-bit H x W x 3 raster")
        h, w = self.image.shape[:2]
        masks = [("od_mask", self.od_mask)] + [(k.value, m) for k, m in self.lesion_masks.items()]
        for name, m in masks:
            if m is None:
                continue
            if m.shape != (h, w):
                raise DataError(f"{self.id}: {name} shape {m.shape} differs from image {(h, w)}")
            if not np.isin(m, (0, 1)).all():
                raise DataError(f"{self.id}: {name} must contain only 0 and 1")
        if self.fovea is not None and not (self.fovea.x < w and self.fovea.y < h):
            raise DataError(f"{self.id}: fovea {self.fovea.as_tuple()} outside {w}x{h} frame")

    @property
    def shape(self) -> tuple[int, int]:
        return self.image.shape[:2]


def _resolve(root: Path, value: str) -> Path:
    p = Path(value)
    return Path(os.path.normpath(p if p.is_absolute() else root / p))


def load_manifest(path, split: str = "train", check_paths: bool = True) -> DatasetManifest:
    """Parse and validate a manifest CSV.

    Relative paths are resolved against the manifest's directory. Errors name
    the offending line so large manifests can be fixed without guessing.
    """
    path = Path(path)
    if split not in SPLITS:
        raise DataError(f"unknown split {split!r}; expected one of {SPLITS}")
    if not path.is_file():
        raise DataError(f"manifest not found: {path}")
    root = path.parent.resolve()
    entries = []
    seen = {}
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            return DatasetManifest([], split, root)
        missing = [c for c in MANIFEST_COLUMNS if c not in reader.fieldnames]
        if missing:
            raise DataError(f"{path}: header lacks columns {missing}")
        for row in reader:
            line = reader.line_num
            where = f"{path.name} line {line}"
            entry = _parse_row(row, root, where)
            if entry.id in seen:
                raise DataError(f"{where}: duplicate id {entry.id!r} (first on line {seen[entry.id]})")
            seen[entry.id] = line
            if check_paths:
                _check_paths(entry, where)
            entries.append(entry)
    return DatasetManifest(entries, split, root)


def _parse_row(row: dict, root: Path, where: str) -> ManifestEntry:
    def cell(name):
        return (row.get(name) or "").strip()

    sid = cell("id")
    if not sid:
        raise DataError(f"{where}: empty id")
    if not cell("image"):
        raise DataError(f"{where}: empty image path")
    amd_raw = cell("amd")
    if amd_raw not in ("", "0", "1"):
        raise DataError(f"{where}: amd must be 0, 1 or empty, got {amd_raw!r}")
    fx, fy = cell("fovea_x"), cell("fovea_y")
    if bool(fx) != bool(fy):
        raise DataError(f"{where}: fovea_x and fovea_y must both be present or both empty")
    fovea = None
    if fx:
        try:
            fovea = FoveaCoordinate(float(fx), float(fy))
        except ValueError as exc:
            raise DataError(f"{where}: bad fovea coordinate: {exc}") from None
    lesions = {}
    for kind in LesionKind:
        if cell(kind.column):
            lesions[kind] = _resolve(root, cell(kind.column))
    return ManifestEntry(
        id=sid,
        image=_resolve(root, cell("image")),
        amd=int(amd_raw) if amd_raw else None,
        od_mask=_resolve(root, cell("od_mask")) if cell("od_mask") else None,
        fovea=fovea,
        lesion_masks=lesions,
    )


def _check_paths(entry: ManifestEntry, where: str) -> None:
    paths = [("image", entry.image), ("od_mask", entry.od_mask)]
    paths += [(k.column, p) for k, p in entry.lesion_masks.items()]
    for name, p in paths:
        if p is not None and not p.is_file():
            raise DataError(f"{where} ({entry.id}): {name} file not found: {p}")


def write_manifest(manifest: DatasetManifest, path) -> Path:
    """Write ``manifest`` as CSV with paths relative to the output file when possible."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    base = path.parent.resolve()

    def rel(p):
        if p is None:
            return ""
        try:
            return os.path.relpath(Path(p).resolve(), base)
        except ValueError:  # different drive on Windows
            return str(Path(p).resolve())

    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(MANIFEST_COLUMNS)
        for e in manifest.entries:
            if e.replica:
                continue
            row = [
                e.id,
                rel(e.image),
                "" if e.amd is None else str(e.amd),
                rel(e.od_mask),
                "" if e.fovea is None else repr(float(e.fovea.x)),
                "" if e.fovea is None else repr(float(e.fovea.y)),
            ]
            row += [rel(e.lesion_masks.get(k)) for k in LesionKind]
            writer.writerow(row)
    return path


def read_image(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8).copy()


def read_mask(path) -> np.ndarray:
    # annotation tools commonly store foreground as 255
    with Image.open(path) as im:
        arr = np.asarray(im.convert("L"))
    return (arr > 127).astype(np.uint8)


def write_mask(path, mask: np.ndarray) -> None:
    Image.fromarray((np.asarray(mask) > 0).astype(np.uint8) * 255, mode="L").save(path)


def load_sample(entry: ManifestEntry) -> FundusSample:
    try:
        image = read_image(entry.image)
        od = read_mask(entry.od_mask) if entry.od_mask is not None else None
        lesions = {k: read_mask(p) for k, p in entry.lesion_masks.items()}
    except (OSError, ValueError) as exc:
        raise DataError(f"{entry.id}: cannot read annotation files: {exc}") from exc
    return FundusSample(entry.id, image, entry.amd, od, entry.fovea, lesions)


def oversample(manifest: DatasetManifest, target_ratio: float, seed: int = 0) -> DatasetManifest:
    """Replicate minority-class rows until minority/majority >= ``target_ratio``.

    Replicas are appended after the originals, cycling through the minority
    entries in a seed-determined order so the extra copies spread evenly.
    """
    if target_ratio <= 0:
        raise ValueError("target_ratio must be positive")
    pos = [e for e in manifest.entries if e.amd == 1]
    neg = [e for e in manifest.entries if e.amd == 0]
    if not pos or not neg:
        raise DataError("oversampling needs both AMD and non-AMD entries")
    minority, majority = (pos, neg) if len(pos) <= len(neg) else (neg, pos)
    needed = math.ceil(target_ratio * len(majority) - 1e-9) - len(minority)
    if needed <= 0:
        return DatasetManifest(list(manifest.entries), manifest.split, manifest.root)

    order = np.random.default_rng(seed).permutation(len(minority))
    replicas = []
    counts = {}
    for i in range(needed):
        src = minority[order[i % len(minority)]]
        counts[src.id] = counts.get(src.id, 0) + 1
        replicas.append(replace(src, replica=counts[src.id]))
    return DatasetManifest(list(manifest.entries) + replicas, manifest.split, manifest.root)
