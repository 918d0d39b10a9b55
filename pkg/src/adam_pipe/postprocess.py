"""Mask clean-up: largest component, convex hull and area-based detection."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage


@dataclass
class PostprocessConfig:
    binarize_threshold: float = 0.5
    connectivity: int = 8
    od_min_area_fraction: float = 0.0005
    lesion_min_area_fraction: float = 0.0002

    def problems(self, prefix="postprocess") -> list:
        out = []
        if self.connectivity not in (4, 8):
            out.append(f"{prefix}.connectivity must be 4 or 8")
        if not 0 <= self.binarize_threshold <= 1:
            out.append(f"{prefix}.binarize_threshold must lie in [0, 1]")
        if self.od_min_area_fraction < 0 or self.lesion_min_area_fraction < 0:
            out.append(f"{prefix}: min area fractions must be >= 0")
        return out


@dataclass
class ComponentLabeling:
    labels: np.ndarray
    sizes: list
    connectivity: int


def _structure(connectivity: int) -> np.ndarray:
    if connectivity == 8:
        return np.ones((3, 3), dtype=bool)
    if connectivity == 4:
        return ndimage.generate_binary_structure(2, 1)
    raise ValueError(f"connectivity must be 4 or 8, got {connectivity}")


def label_components(mask: np.ndarray, connectivity: int = 8) -> ComponentLabeling:
    """Label foreground components; label order follows each component's first pixel in raster order."""
    labels, n = ndimage.label(np.asarray(mask) > 0, structure=_structure(connectivity))
    sizes = np.bincount(labels.ravel(), minlength=n + 1)[1:].tolist()
    return ComponentLabeling(labels, sizes, connectivity)


def largest_component(mask: np.ndarray, connectivity: int = 8) -> np.ndarray:
    mask = np.asarray(mask)
    lab = label_components(mask, connectivity)
    if not lab.sizes:
        return np.zeros(mask.shape, dtype=np.uint8)
    # argmax takes the first maximum; scipy numbers components by first pixel in
    # row-major order, so that is the tie-break on minimal pixel index.
    keep = int(np.argmax(lab.sizes)) + 1
    return (lab.labels == keep).astype(np.uint8)


def _cross(o, a, b) -> int:
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def hull_vertices(points) -> list:
    """Monotone-chain convex hull of integer points, counter-clockwise, no collinear vertices."""
    pts = sorted(set(map(tuple, points)))
    if len(pts) <= 2:
        return pts
    lower, upper = [], []
    for p in pts:
        while len(lower) >= 2 and _cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    for p in reversed(pts):
        while len(upper) >= 2 and _cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    return lower[:-1] + upper[:-1]


def convex_hull_mask(mask: np.ndarray) -> np.ndarray:
    """Fill the convex hull of the foreground pixel centres.

    Membership is decided with exact integer cross products and the hull
    boundary counts as inside, so applying the operator twice changes nothing.
    """
    mask = np.asarray(mask)
    out = np.zeros(mask.shape, dtype=np.uint8)
    rr, cc = np.nonzero(mask)
    if rr.size == 0:
        return out
    verts = hull_vertices(zip(rr.tolist(), cc.tolist()))
    r0, r1, c0, c1 = rr.min(), rr.max(), cc.min(), cc.max()
    gr, gc = np.mgrid[r0:r1 + 1, c0:c1 + 1]
    gr = gr.astype(np.int64)
    gc = gc.astype(np.int64)
    if len(verts) == 1:
        inside = np.ones(gr.shape, dtype=bool)
    elif len(verts) == 2:
        (ar, ac), (br, bc) = verts
        # on the segment: collinear and inside the bounding box (already implied by the grid)
        inside = (br - ar) * (gc - ac) - (bc - ac) * (gr - ar) == 0
    else:
        inside = np.ones(gr.shape, dtype=bool)
        n = len(verts)
        for i in range(n):
            (ar, ac), (br, bc) = verts[i], verts[(i + 1) % n]
            inside &= (br - ar) * (gc - ac) - (bc - ac) * (gr - ar) >= 0
    out[r0:r1 + 1, c0:c1 + 1] = inside
    return out


def detect_by_area(mask: np.ndarray, min_area: float):
    if min_area < 0:
        raise ValueError("min_area must be >= 0")
    mask = (np.asarray(mask) > 0).astype(np.uint8)
    area = int(mask.sum())
    if area == 0 or area < min_area:
        return False, np.zeros_like(mask)
    return True, mask


def od_postprocess(raw: np.ndarray, binarize_threshold: float = 0.5, min_area: float = 0.0,
                   connectivity: int = 8):
    """Binarise, keep the largest component, fill its hull, then apply the area rule."""
    binary = (np.asarray(raw) >= binarize_threshold).astype(np.uint8)
    mask = largest_component(binary, connectivity)
    mask = convex_hull_mask(mask)
    return detect_by_area(mask, min_area)


def lesion_postprocess(raw: np.ndarray, binarize_threshold: float = 0.5, min_area: float = 0.0):
    binary = (np.asarray(raw) >= binarize_threshold).astype(np.uint8)
    return detect_by_area(binary, min_area)
