"""Fovea distance-map targets and decoding of predicted maps back to a point."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from PIL import Image
from scipy import ndimage

from .data_model import FoveaCoordinate
from .errors import DataError

MODES = ("ramp", "global")
TOP_FRACTION = 0.01


@dataclass
class DistmapConfig:
    radius_fraction: float = 0.15
    mode: str = "ramp"

    def problems(self, prefix="distmap") -> list:
        out = []
        if self.radius_fraction <= 0:
            out.append(f"{prefix}.radius_fraction must be > 0")
        if self.mode not in MODES:
            out.append(f"{prefix}.mode must be one of {MODES}")
        return out

    def radius_for(self, height: int, width: int) -> float:
        return self.radius_fraction * min(height, width)


@dataclass
class DistanceMap:
    values: np.ndarray
    radius: Optional[float] = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        v = self.values
        if v.ndim != 2:
            raise ValueError("distance map must be a single-channel raster")
        if v.size and (np.nanmin(v) < 0 or np.nanmax(v) > 1 or not np.isfinite(v).all()):
            raise ValueError("distance map values must lie in [0, 1]")


def _coords(height: int, width: int):
    rows = np.arange(height, dtype=np.float64)[:, None]
    cols = np.arange(width, dtype=np.float64)[None, :]
    return rows, cols


def euclidean_distance_field(height: int, width: int, point: FoveaCoordinate) -> np.ndarray:
    """Exact distance from every pixel centre to ``point`` (x = column, y = row)."""
    if not (0 <= point.x < width and 0 <= point.y < height):
        raise DataError(f"point {point.as_tuple()} outside {width}x{height} frame")
    rows, cols = _coords(height, width)
    return np.hypot(rows - point.y, cols - point.x)


def normalize_invert(field: np.ndarray) -> np.ndarray:
    field = np.asarray(field, dtype=np.float64)
    if (field < 0).any():
        raise ValueError("distance field must be non-negative")
    peak = field.max()
    if peak == 0:
        return np.ones_like(field)
    return 1.0 - field / peak


def truncate_radius(values: np.ndarray, point: FoveaCoordinate, radius: float,
                    mode: str = "ramp") -> np.ndarray:
    """Zero everything farther than ``radius`` from ``point``.

    In ``ramp`` mode the surviving disk is re-expressed as ``1 - d / radius``,
    which is exactly the in-disk rescaling of a normalised, inverted distance
    map that sends the disk edge to 0 and the centre to 1. ``global`` mode
    keeps the input values inside the disk untouched.
    """
    if radius <= 0:
        raise ValueError("radius must be positive")
    values = np.asarray(values, dtype=np.float64)
    h, w = values.shape
    rows, cols = _coords(h, w)
    d = np.hypot(rows - point.y, cols - point.x)
    if mode == "ramp":
        return np.maximum(0.0, 1.0 - d / radius)
    if mode == "global":
        return np.where(d <= radius, values, 0.0)
    raise ValueError(f"unknown truncation mode {mode!r}")


def build_target(height: int, width: int, fovea: FoveaCoordinate, radius: float,
                 mode: str = "ramp") -> DistanceMap:
    field_ = euclidean_distance_field(height, width, fovea)
    values = truncate_radius(normalize_invert(field_), fovea, radius, mode)
    return DistanceMap(values, radius=float(radius), meta={"mode": mode})


def _components_by_rank(mask: np.ndarray, values: np.ndarray):
    structure = np.ones((3, 3), dtype=bool)
    labels, n = ndimage.label(mask, structure=structure)
    sizes = np.bincount(labels.ravel(), minlength=n + 1)[1:]
    return labels, n, sizes


def extract_fovea(prediction) -> FoveaCoordinate:
    """Decode a predicted map to a point.

    Keeps the brightest 1% of pixels, labels their 8-connected clusters and
    returns the intensity-weighted centroid of the biggest one. Ties go to the
    cluster holding the global maximum, then to the one whose bounding box
    starts first in row-major order.
    """
    values = prediction.values if isinstance(prediction, DistanceMap) else np.asarray(prediction)
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 2:
        raise ValueError("prediction must be a single-channel raster")
    vmin, vmax = values.min(), values.max()
    if not np.isfinite(values).all() or vmax == vmin:
        raise DataError("no fovea signal: prediction is constant")

    flat = np.sort(values, axis=None)
    k = max(1, int(np.ceil(TOP_FRACTION * flat.size)))
    threshold = flat[-k]
    mask = values >= threshold if threshold > vmin else values > vmin

    labels, n, sizes = _components_by_rank(mask, values)
    best = np.flatnonzero(sizes == sizes.max()) + 1
    if len(best) > 1:
        max_label = labels.ravel()[np.argmax(np.where(mask, values, -np.inf))]
        if max_label in best:
            best = np.array([max_label])
        else:
            objects = ndimage.find_objects(labels)
            best = np.array([min(best, key=lambda lab: (objects[lab - 1][0].start, objects[lab - 1][1].start))])
    chosen = labels == best[0]

    weights = np.where(chosen, values, 0.0)
    total = weights.sum()
    if total <= 0:
        weights = chosen.astype(np.float64)
        total = weights.sum()
    rows, cols = np.nonzero(chosen)
    w = weights[rows, cols]
    return FoveaCoordinate(float((cols * w).sum() / total), float((rows * w).sum() / total))


def save_distance_map(path, dmap) -> None:
    values = dmap.values if isinstance(dmap, DistanceMap) else np.asarray(dmap)
    arr = np.rint(np.clip(values, 0, 1) * 65535).astype(np.uint16)
    Image.fromarray(arr).save(path)


def load_distance_map(path) -> DistanceMap:
    with Image.open(path) as im:
        arr = np.asarray(im).astype(np.float64)
    return DistanceMap(arr / 65535.0)
