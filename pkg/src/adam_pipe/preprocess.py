"""Channel preprocessing, augmentation and macular cropping for fundus images."""

from __future__ import annotations

import math
import re
import zlib
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from PIL import Image
from scipy import ndimage
from skimage import color, exposure

from .data_model import FoveaCoordinate

HISTOGRAM_OPS = ("equalize", "adaptive_equalize", "rescale", "match")


@dataclass
class PhotometricConfig:
    brightness_delta: float = 32 / 255
    contrast_range: tuple = (0.75, 1.25)
    saturation_range: tuple = (0.75, 1.25)
    hue_delta: float = 0.05
    probability: float = 0.5


@dataclass
class AugmentationConfig:
    flip_probability: float = 0.5
    max_rotation_degrees: float = 20.0
    rot90: bool = True
    photometric: PhotometricConfig = field(default_factory=PhotometricConfig)
    histogram_ops: list = field(default_factory=lambda: ["equalize", "adaptive_equalize", "rescale"])
    histogram_probability: float = 0.5
    rescale_percentile_pairs: list = field(default_factory=lambda: [(1, 99), (2, 98), (5, 95)])
    match_reference_ids: list = field(default_factory=list)
    clahe_tiles: int = 8
    clahe_clip: float = 0.01
    seed: int = 0

    def problems(self, prefix="augmentation") -> list:
        out = []
        if not 0 <= self.flip_probability <= 1:
            out.append(f"{prefix}.flip_probability must lie in [0, 1]")
        if not 0 <= self.photometric.probability <= 1:
            out.append(f"{prefix}.photometric.probability must lie in [0, 1]")
        if not 0 <= self.histogram_probability <= 1:
            out.append(f"{prefix}.histogram_probability must lie in [0, 1]")
        if self.max_rotation_degrees < 0:
            out.append(f"{prefix}.max_rotation_degrees must be >= 0")
        for op in self.histogram_ops:
            if op not in HISTOGRAM_OPS:
                out.append(f"{prefix}.histogram_ops: unknown op {op!r}")
        for pair in self.rescale_percentile_pairs:
            lo, hi = pair
            if not 0 <= lo < hi <= 100:
                out.append(f"{prefix}.rescale_percentile_pairs: need 0 <= low < high <= 100, got {tuple(pair)}")
        return out


@dataclass
class CropSpec:
    zoom_levels: list = field(default_factory=lambda: [1.0, 0.75, 0.5])

    def problems(self, prefix="crops") -> list:
        return [f"{prefix}.zoom_levels: {z} not in (0, 1]" for z in self.zoom_levels if not 0 < z <= 1]


def sample_rng(seed: int, sample_id: str, *extra: int) -> np.random.Generator:
    """Per-sample generator, independent of iteration order."""
    return np.random.default_rng([seed, zlib.crc32(sample_id.encode()), *extra])


def invert_green_channel(image: np.ndarray) -> np.ndarray:
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] < 3:
        raise ValueError(f"expected an H x W x 3 image, got shape {image.shape}")
    if image.dtype != np.uint8:
        raise ValueError("expected an 8-bit image")
    return 255 - image[..., 1]


# --- geometry ---------------------------------------------------------------

@dataclass
class GeometricTransform:
    """A horizontal flip, then ``k90`` clockwise quarter turns, then a small rotation."""

    flip: bool = False
    k90: int = 0
    angle: float = 0.0

    @classmethod
    def draw(cls, config: AugmentationConfig, rng: np.random.Generator) -> "GeometricTransform":
        flip = bool(rng.random() < config.flip_probability)
        k90 = int(rng.integers(0, 4)) if config.rot90 else 0
        m = config.max_rotation_degrees
        angle = float(rng.uniform(-m, m)) if m > 0 else 0.0
        return cls(flip, k90, angle)

    def apply_raster(self, arr: np.ndarray, order: int = 1) -> np.ndarray:
        out = np.asarray(arr)
        if self.flip:
            out = out[:, ::-1]
        k = self.k90 % 4
        if k:
            out = np.rot90(out, k=-k, axes=(0, 1))
        if self.angle:
            out = self._rotate_small(out, order)
        return np.ascontiguousarray(out)

    def apply_point(self, point, shape) -> FoveaCoordinate:
        h, w = shape[:2]
        x, y = (point.x, point.y) if isinstance(point, FoveaCoordinate) else point
        if self.flip:
            x = w - 1 - x
        for _ in range(self.k90 % 4):
            # clockwise quarter turn: (row r, col c) -> (c, h - 1 - r)
            x, y = h - 1 - y, x
            h, w = w, h
        if self.angle:
            t = math.radians(self.angle)
            cx, cy = (w - 1) / 2, (h - 1) / 2
            dx, dy = x - cx, y - cy
            x = cx + math.cos(t) * dx - math.sin(t) * dy
            y = cy + math.sin(t) * dx + math.cos(t) * dy
        x = min(max(x, 0.0), w - 1.0)
        y = min(max(y, 0.0), h - 1.0)
        return FoveaCoordinate(float(x), float(y))

    def _rotate_small(self, arr: np.ndarray, order: int) -> np.ndarray:
        t = math.radians(self.angle)
        h, w = arr.shape[:2]
        centre = np.array([(h - 1) / 2, (w - 1) / 2])
        # inverse map in (row, col): output -> input
        mat = np.array([[math.cos(t), -math.sin(t)], [math.sin(t), math.cos(t)]])
        offset = centre - mat @ centre
        dtype = arr.dtype
        work = arr.astype(np.float64)

        def rot(plane):
            return ndimage.affine_transform(plane, mat, offset=offset, order=order, mode="reflect")

        if work.ndim == 2:
            out = rot(work)
        else:
            out = np.stack([rot(work[..., c]) for c in range(work.shape[2])], axis=-1)
        if np.issubdtype(dtype, np.integer):
            info = np.iinfo(dtype)
            out = np.clip(np.rint(out), info.min, info.max)
        return out.astype(dtype)


def geometric_augment(image, aligned_targets: Sequence, config: AugmentationConfig,
                      draw: np.random.Generator):
    """Apply one random flip/rotation to an image and everything aligned with it.

    Integer-typed rasters in ``aligned_targets`` are treated as label maps and
    resampled with nearest neighbour; float rasters are interpolated linearly;
    ``FoveaCoordinate`` or ``(x, y)`` tuples are mapped through the same affine
    transform as the pixels.
    """
    tf = GeometricTransform.draw(config, draw)
    shape = np.asarray(image).shape
    new_image = tf.apply_raster(image, order=1)
    out = []
    for t in aligned_targets:
        if t is None:
            out.append(None)
        elif isinstance(t, (FoveaCoordinate, tuple)):
            out.append(tf.apply_point(t, shape))
        else:
            t = np.asarray(t)
            if t.shape[:2] != shape[:2]:
                raise ValueError(f"target shape {t.shape} not aligned with image {shape}")
            order = 0 if np.issubdtype(t.dtype, np.integer) or t.dtype == bool else 1
            out.append(tf.apply_raster(t, order=order))
    return new_image, out


# --- photometric ------------------------------------------------------------

def photometric_distort(image: np.ndarray, config: PhotometricConfig,
                        rng: np.random.Generator) -> np.ndarray:
    img = image.astype(np.float64) / 255.0
    p = config.probability
    if rng.random() < p:
        img = img + rng.uniform(-config.brightness_delta, config.brightness_delta)
    if rng.random() < p:
        mean = img.mean()
        img = (img - mean) * rng.uniform(*config.contrast_range) + mean
    img = np.clip(img, 0, 1)
    do_sat = rng.random() < p
    do_hue = rng.random() < p
    if do_sat or do_hue:
        hsv = color.rgb2hsv(img)
        if do_sat:
            hsv[..., 1] = np.clip(hsv[..., 1] * rng.uniform(*config.saturation_range), 0, 1)
        if do_hue:
            hsv[..., 0] = (hsv[..., 0] + rng.uniform(-config.hue_delta, config.hue_delta)) % 1.0
        img = color.hsv2rgb(hsv)
    return np.clip(np.rint(img * 255), 0, 255).astype(np.uint8)


# --- histogram operations ---------------------------------------------------

def _per_channel(fn, image):
    image = np.asarray(image)
    if image.ndim == 2:
        return fn(image)
    return np.stack([fn(image[..., c]) for c in range(image.shape[2])], axis=-1)


def _equalize_plane(plane: np.ndarray) -> np.ndarray:
    hist = np.bincount(plane.ravel(), minlength=256)
    cdf = np.cumsum(hist)
    cdf_min = cdf[np.flatnonzero(hist)[0]]
    n = plane.size
    if n == cdf_min:
        return plane.copy()
    lut = np.rint((cdf - cdf_min) / (n - cdf_min) * 255)
    return np.clip(lut, 0, 255).astype(np.uint8)[plane]


def histogram_equalize(image: np.ndarray) -> np.ndarray:
    """Global histogram equalisation, channel by channel.

    Uses the ``(cdf - cdf_min) / (N - cdf_min)`` mapping so the darkest and
    brightest occupied levels land on 0 and 255. Constant channels pass
    through unchanged.
    """
    return _per_channel(_equalize_plane, _as_uint8(image))


def adaptive_histogram_equalize(image: np.ndarray, tiles: int = 8, clip: float = 0.01) -> np.ndarray:
    image = _as_uint8(image)
    if image.min() == image.max():
        return image.copy()
    h, w = image.shape[:2]
    kernel = (max(h // tiles, 1), max(w // tiles, 1))
    out = exposure.equalize_adapthist(image, kernel_size=kernel, clip_limit=clip)
    return np.clip(np.rint(out * 255), 0, 255).astype(np.uint8)


def intensity_rescale(image: np.ndarray, low_pct: float, high_pct: float) -> np.ndarray:
    """Linearly stretch the ``[low_pct, high_pct]`` percentile band onto [0, 255].

    Percentiles are taken over all channels jointly so colour balance and
    pixel ordering survive.
    """
    if not 0 <= low_pct < high_pct <= 100:
        raise ValueError(f"need 0 <= low < high <= 100, got ({low_pct}, {high_pct})")
    image = _as_uint8(image)
    lo, hi = np.percentile(image, [low_pct, high_pct])
    if hi <= lo:
        return image.copy()
    out = (image.astype(np.float64) - lo) * (255.0 / (hi - lo))
    return np.clip(np.rint(out), 0, 255).astype(np.uint8)


def _match_plane(src: np.ndarray, ref: np.ndarray) -> np.ndarray:
    src_cdf = np.cumsum(np.bincount(src.ravel(), minlength=256)) / src.size
    ref_cdf = np.cumsum(np.bincount(ref.ravel(), minlength=256)) / ref.size
    # smallest reference level whose CDF reaches the source CDF
    lut = np.searchsorted(ref_cdf, src_cdf - 1e-12, side="left")
    return np.clip(lut, 0, 255).astype(np.uint8)[src]


def histogram_match(image: np.ndarray, reference: np.ndarray) -> np.ndarray:
    """Monotone CDF mapping of ``image`` onto ``reference``, channel by channel."""
    image, reference = _as_uint8(image), _as_uint8(reference)
    if image.ndim != reference.ndim:
        raise ValueError("image and reference must have the same number of channels")
    if reference.min() == reference.max():
        raise ValueError("histogram matching needs a non-constant reference")
    if image.ndim == 2:
        return _match_plane(image, reference)
    return np.stack([_match_plane(image[..., c], reference[..., c]) for c in range(image.shape[2])], axis=-1)


def _as_uint8(image) -> np.ndarray:
    image = np.asarray(image)
    if image.dtype != np.uint8:
        raise ValueError(f"expected 8-bit input, got {image.dtype}")
    return image


_RESCALE_RE = re.compile(r"^rescale\(\s*([\d.]+)\s*,\s*([\d.]+)\s*\)$")


def apply_histogram_op(name: str, image: np.ndarray, config: Optional[AugmentationConfig] = None,
                       rng: Optional[np.random.Generator] = None, references: Sequence = ()) -> np.ndarray:
    """Run one named histogram operation.

    ``rescale(lo,hi)`` fixes the percentile pair; bare ``rescale`` draws one of
    the configured pairs. ``match`` draws one of ``references``.
    """
    config = config or AugmentationConfig()
    if name == "identity":
        return image
    if name == "equalize":
        return histogram_equalize(image)
    if name == "adaptive_equalize":
        return adaptive_histogram_equalize(image, config.clahe_tiles, config.clahe_clip)
    m = _RESCALE_RE.match(name)
    if m:
        return intensity_rescale(image, float(m.group(1)), float(m.group(2)))
    if name == "rescale":
        pairs = config.rescale_percentile_pairs
        lo, hi = pairs[int(rng.integers(len(pairs)))] if rng is not None else pairs[0]
        return intensity_rescale(image, lo, hi)
    if name == "match":
        if not references:
            return image
        ref = references[int(rng.integers(len(references)))] if rng is not None else references[0]
        if ref.shape[-1:] != image.shape[-1:] and image.ndim == 3:
            raise ValueError("match reference has a different channel count")
        return histogram_match(image, ref)
    raise ValueError(f"unknown histogram op {name!r}")


def augment_image(image: np.ndarray, config: AugmentationConfig, rng: np.random.Generator,
                  references: Sequence = ()) -> np.ndarray:
    """Photometric distortion followed (with some probability) by one histogram op."""
    out = photometric_distort(image, config.photometric, rng) if image.ndim == 3 else image
    if config.histogram_ops and rng.random() < config.histogram_probability:
        op = config.histogram_ops[int(rng.integers(len(config.histogram_ops)))]
        out = apply_histogram_op(op, out, config, rng, references)
    return out


# --- macular crops ----------------------------------------------------------

def crop_window(shape, centre, side: int) -> tuple[int, int]:
    h, w = shape[:2]
    cx, cy = centre
    x0 = math.floor(cx - side / 2 + 0.5)
    y0 = math.floor(cy - side / 2 + 0.5)
    return min(max(x0, 0), w - side), min(max(y0, 0), h - side)


def crop_macular(image: np.ndarray, fovea: Optional[FoveaCoordinate], spec: CropSpec) -> list:
    """Square crops around the fovea (or the image centre), one per zoom level.

    The window is shifted, not shrunk, when it would leave the image.
    """
    problems = spec.problems()
    if problems:
        raise ValueError("; ".join(problems))
    h, w = image.shape[:2]
    centre = (fovea.x, fovea.y) if fovea is not None else (w / 2, h / 2)
    crops = []
    for zoom in spec.zoom_levels:
        side = int(round(zoom * min(h, w)))
        if side < 8:
            raise ValueError(f"crop side {side} px at zoom {zoom} is below the 8 px minimum")
        x0, y0 = crop_window(image.shape, centre, side)
        crops.append(image[y0:y0 + side, x0:x0 + side].copy())
    return crops


# --- letterboxing -----------------------------------------------------------

@dataclass(frozen=True)
class Letterbox:
    """Placement of a resized image inside a fixed-size canvas."""

    orig_shape: tuple
    canvas_shape: tuple
    inner_shape: tuple
    top: int
    left: int

    @classmethod
    def fit(cls, orig_shape, canvas_shape) -> "Letterbox":
        h, w = orig_shape[:2]
        th, tw = canvas_shape[:2]
        scale = min(th / h, tw / w)
        nh = min(th, max(1, int(round(h * scale))))
        nw = min(tw, max(1, int(round(w * scale))))
        return cls((h, w), (th, tw), (nh, nw), (th - nh) // 2, (tw - nw) // 2)

    def to_canvas(self, point) -> FoveaCoordinate:
        x, y = (point.x, point.y) if isinstance(point, FoveaCoordinate) else point
        sy = self.inner_shape[0] / self.orig_shape[0]
        sx = self.inner_shape[1] / self.orig_shape[1]
        cx = (x + 0.5) * sx - 0.5 + self.left
        cy = (y + 0.5) * sy - 0.5 + self.top
        return FoveaCoordinate(min(max(cx, 0.0), self.canvas_shape[1] - 1.0),
                               min(max(cy, 0.0), self.canvas_shape[0] - 1.0))

    def from_canvas(self, point) -> FoveaCoordinate:
        x, y = (point.x, point.y) if isinstance(point, FoveaCoordinate) else point
        sy = self.inner_shape[0] / self.orig_shape[0]
        sx = self.inner_shape[1] / self.orig_shape[1]
        ox = (x - self.left + 0.5) / sx - 0.5
        oy = (y - self.top + 0.5) / sy - 0.5
        return FoveaCoordinate(min(max(ox, 0.0), self.orig_shape[1] - 1.0),
                               min(max(oy, 0.0), self.orig_shape[0] - 1.0))


def _resize(arr: np.ndarray, shape, order: int) -> np.ndarray:
    h, w = shape
    if arr.shape[:2] == (h, w):
        return arr.copy()
    resample = Image.NEAREST if order == 0 else Image.BILINEAR
    if arr.dtype == np.uint8:
        return np.asarray(Image.fromarray(arr).resize((w, h), resample))
    planes = arr[..., None] if arr.ndim == 2 else arr
    out = np.stack([
        np.asarray(Image.fromarray(planes[..., c].astype(np.float32), mode="F").resize((w, h), resample))
        for c in range(planes.shape[2])
    ], axis=-1)
    return out[..., 0] if arr.ndim == 2 else out


def letterbox(arr: np.ndarray, canvas_shape, order: int = 1, fill=0):
    """Resize ``arr`` to fit ``canvas_shape`` keeping its aspect ratio, pad the rest."""
    arr = np.asarray(arr)
    box = Letterbox.fit(arr.shape, canvas_shape)
    inner = _resize(arr, box.inner_shape, order)
    out = np.full(tuple(box.canvas_shape) + arr.shape[2:], fill, dtype=inner.dtype)
    nh, nw = box.inner_shape
    out[box.top:box.top + nh, box.left:box.left + nw] = inner
    return out, box


def unletterbox(arr: np.ndarray, box: Letterbox, order: int = 1) -> np.ndarray:
    nh, nw = box.inner_shape
    inner = np.asarray(arr)[box.top:box.top + nh, box.left:box.left + nw]
    return _resize(inner, box.orig_shape, order)
