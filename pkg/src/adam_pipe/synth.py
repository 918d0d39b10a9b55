"""Deterministic synthetic fundus images with exact annotations.

Each image has a dark field-of-view border, a bright optic disc, a darker
macula centred on the fovea and vessel-like arcs leaving the disc. Half of a
generated set carries lesion speckle near the macula and is labelled AMD.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from .data_model import (
    DatasetManifest,
    FoveaCoordinate,
    FundusSample,
    LesionKind,
    ManifestEntry,
    write_manifest,
    write_mask,
)
from .errors import DataError

_LESION_COLOURS = {
    LesionKind.DRUSEN: (235, 215, 120),
    LesionKind.EXUDATE: (250, 245, 210),
    LesionKind.HEMORRHAGE: (95, 15, 10),
    LesionKind.SCAR: (215, 175, 150),
    LesionKind.OTHER: (60, 90, 40),
}


def _grid(size):
    r = np.arange(size, dtype=np.float64)[:, None]
    c = np.arange(size, dtype=np.float64)[None, :]
    return r, c


def _disk(size, cx, cy, radius):
    r, c = _grid(size)
    return (r - cy) ** 2 + (c - cx) ** 2 <= radius ** 2


def _bezier(p0, p1, p2, n=200):
    t = np.linspace(0.0, 1.0, n)[:, None]
    return (1 - t) ** 2 * p0 + 2 * (1 - t) * t * p1 + t ** 2 * p2


def _stroke(size, pts, width):
    """Boolean raster of all pixels within ``width / 2`` of the polyline samples."""
    r, c = _grid(size)
    out = np.zeros((size, size), dtype=bool)
    half = width / 2.0
    for x, y in pts:
        x0, x1 = int(max(0, np.floor(x - half - 1))), int(min(size, np.ceil(x + half + 2)))
        y0, y1 = int(max(0, np.floor(y - half - 1))), int(min(size, np.ceil(y + half + 2)))
        if x0 >= x1 or y0 >= y1:
            continue
        out[y0:y1, x0:x1] |= (r[y0:y1] - y) ** 2 + (c[:, x0:x1] - x) ** 2 <= half ** 2
    return out


def generate_sample(index: int, size: int = 256, seed: int = 0, amd: bool = False) -> FundusSample:
    rng = np.random.default_rng([seed, index])
    s = float(size)
    r, c = _grid(size)
    centre = (s - 1) / 2

    # base colour with radial vignette and slow illumination drift
    rad = np.hypot(r - centre, c - centre) / (0.46 * s)
    shade = 1.0 - 0.35 * np.clip(rad, 0, 1) ** 2
    tilt = 1.0 + 0.08 * rng.uniform(-1, 1) * (c - centre) / s + 0.08 * rng.uniform(-1, 1) * (r - centre) / s
    base = np.array([rng.uniform(160, 190), rng.uniform(70, 95), rng.uniform(30, 50)])
    img = base[None, None, :] * (shade * tilt)[..., None]

    side = rng.choice([-1.0, 1.0])  # which side the disc sits on
    od_x = centre + side * rng.uniform(0.18, 0.26) * s
    od_y = centre + rng.uniform(-0.06, 0.06) * s
    od_r = rng.uniform(0.07, 0.09) * s
    fov_x = centre - side * rng.uniform(0.03, 0.2) * s
    fov_y = centre + rng.uniform(-0.14, 0.14) * s

    # macula: smooth darkening around the fovea
    sigma = rng.uniform(0.05, 0.07) * s
    macula = np.exp(-((r - fov_y) ** 2 + (c - fov_x) ** 2) / (2 * sigma ** 2))
    img *= (1.0 - 0.55 * macula)[..., None]

    # vessel arcades leaving the disc, bending around the macula
    vessel_colour = np.array([110.0, 25.0, 20.0])
    for sign in (-1.0, 1.0):
        for spread in (0.22, 0.34):
            p0 = np.array([od_x, od_y])
            p1 = np.array([(od_x + fov_x) / 2, fov_y + sign * spread * s])
            p2 = np.array([fov_x - side * 0.15 * s, fov_y + sign * (spread - 0.08) * s])
            width = max(1.0, s / 128) * (1.6 if spread < 0.3 else 1.0)
            v = _stroke(size, _bezier(p0, p1 + rng.normal(0, 0.02 * s, 2), p2), width)
            img[v] = 0.5 * img[v] + 0.5 * vessel_colour

    od_mask = _disk(size, od_x, od_y, od_r)
    od_colour = np.array([250.0, 225.0, 160.0])
    falloff = np.clip(1.0 - 0.25 * np.hypot(r - od_y, c - od_x) / od_r, 0, 1)
    img[od_mask] = (od_colour[None, :] * falloff[od_mask][:, None])

    lesions = {k: np.zeros((size, size), dtype=np.uint8) for k in LesionKind}
    if amd:
        others = [k for k in LesionKind if k is not LesionKind.DRUSEN]
        picks = rng.choice(len(others), size=int(rng.integers(0, 3)), replace=False)
        kinds = [LesionKind.DRUSEN] + [others[i] for i in sorted(picks)]
        for kind in kinds:
            count = int(rng.integers(3, 9))
            for _ in range(count):
                ang = rng.uniform(0, 2 * np.pi)
                dist = rng.uniform(0.02, 0.12) * s
                lx = float(np.clip(fov_x + dist * np.cos(ang), 0, s - 1))
                ly = float(np.clip(fov_y + dist * np.sin(ang), 0, s - 1))
                lr = rng.uniform(0.008, 0.02) * s * (2.0 if kind is LesionKind.SCAR else 1.0)
                blob = _disk(size, lx, ly, max(lr, 0.8)) & ~od_mask
                lesions[kind][blob] = 1
                img[blob] = np.array(_LESION_COLOURS[kind], dtype=np.float64)

    img += rng.normal(0.0, 4.0, img.shape)
    fov_field = rad <= 1.0
    img[~fov_field] = 0.0
    img = np.clip(np.rint(img), 0, 255).astype(np.uint8)
    for k in lesions:
        lesions[k] &= fov_field.astype(np.uint8)

    return FundusSample(
        id=f"synth_{index:04d}",
        image=img,
        amd_label=int(amd),
        od_mask=od_mask.astype(np.uint8),
        fovea=FoveaCoordinate(float(fov_x), float(fov_y)),
        lesion_masks=lesions,
    )


def amd_flags(n: int, seed: int) -> np.ndarray:
    """Exactly ``n // 2`` AMD images, placed by a seeded permutation."""
    flags = np.zeros(n, dtype=bool)
    flags[np.random.default_rng([seed, 7919]).permutation(n)[: n // 2]] = True
    return flags


def generate_samples(n: int, size: int = 256, seed: int = 0, start: int = 0) -> list:
    flags = amd_flags(start + n, seed)
    return [generate_sample(i, size, seed, bool(flags[i])) for i in range(start, start + n)]


def write_samples(samples, out_dir, manifest_name: str = "manifest.csv") -> Path:
    """Write images, masks and a manifest CSV referencing them."""
    out_dir = Path(out_dir)
    try:
        (out_dir / "images").mkdir(parents=True, exist_ok=True)
        (out_dir / "masks").mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataError(f"cannot write to {out_dir}: {exc}") from exc
    entries = []
    for sample in samples:
        img_path = out_dir / "images" / f"{sample.id}.png"
        Image.fromarray(sample.image).save(img_path)
        od_path = None
        if sample.od_mask is not None:
            od_path = out_dir / "masks" / f"{sample.id}_od.png"
            write_mask(od_path, sample.od_mask)
        lesion_paths = {}
        for kind, mask in sample.lesion_masks.items():
            p = out_dir / "masks" / f"{sample.id}_{kind.value}.png"
            write_mask(p, mask)
            lesion_paths[kind] = p
        entries.append(ManifestEntry(sample.id, img_path, sample.amd_label, od_path, sample.fovea, lesion_paths))
    return write_manifest(DatasetManifest(entries), out_dir / manifest_name)


def write_synthetic_dataset(n: int, size: int, seed: int, out_dir) -> Path:
    return write_samples(generate_samples(n, size, seed), out_dir)
