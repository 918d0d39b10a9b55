"""Challenge metrics: AUC, Dice, detection F1 and fovea distance."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.stats import rankdata


@dataclass
class MetricsConfig:
    empty_dice: str = "one"  # or "exclude"
    fovea_penalty: Optional[float] = None  # None -> image diagonal

    def problems(self, prefix="metrics") -> list:
        out = []
        if self.empty_dice not in ("one", "exclude"):
            out.append(f"{prefix}.empty_dice must be 'one' or 'exclude'")
        if self.fovea_penalty is not None and self.fovea_penalty < 0:
            out.append(f"{prefix}.fovea_penalty must be >= 0")
        return out


def auc(scores, labels) -> float:
    """ROC AUC via the Mann-Whitney rank statistic; ties count one half."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape:
        raise ValueError("scores and labels differ in length")
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = int((labels == 0).sum())
    if n_pos + n_neg != labels.size:
        raise ValueError("labels must be 0 or 1")
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs both positive and negative labels")
    ranks = rankdata(scores)
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def roc_curve(scores, labels):
    """False/true positive rates at every distinct score threshold (descending)."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    order = np.argsort(-scores, kind="mergesort")
    s, y = scores[order], labels[order]
    distinct = np.r_[np.flatnonzero(np.diff(s)), y.size - 1]
    tps = np.cumsum(y)[distinct]
    fps = (distinct + 1) - tps
    tpr = np.r_[0.0, tps / max(y.sum(), 1)]
    fpr = np.r_[0.0, fps / max((1 - y).sum(), 1)]
    return fpr, tpr


def dice(pred_mask, gt_mask) -> float:
    a = np.asarray(pred_mask) > 0
    b = np.asarray(gt_mask) > 0
    if a.shape != b.shape:
        raise ValueError(f"mask shapes differ: {a.shape} vs {b.shape}")
    total = int(a.sum()) + int(b.sum())
    if total == 0:
        return 1.0
    return 2.0 * int((a & b).sum()) / total


def mean_dice(pairs, empty: str = "one") -> float:
    """Average Dice over (pred, gt) pairs; ``empty='exclude'`` drops empty-vs-empty pairs."""
    vals = []
    for p, g in pairs:
        if empty == "exclude" and not np.any(p) and not np.any(g):
            continue
        vals.append(dice(p, g))
    return math.fsum(vals) / len(vals) if vals else float("nan")


def f1_detection(pred_flags, gt_flags) -> float:
    pred = np.asarray(pred_flags).astype(bool)
    gt = np.asarray(gt_flags).astype(bool)
    if pred.shape != gt.shape:
        raise ValueError("flag lists differ in length")
    tp = int((pred & gt).sum())
    fp = int((pred & ~gt).sum())
    fn = int((~pred & gt).sum())
    if tp + fp + fn == 0:
        return 1.0  # nothing to find and nothing claimed: no detection errors
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def fovea_error(pred, gt) -> float:
    px, py = (pred.x, pred.y) if hasattr(pred, "x") else pred
    gx, gy = (gt.x, gt.y) if hasattr(gt, "x") else gt
    if not all(math.isfinite(v) for v in (px, py, gx, gy)):
        raise ValueError("fovea coordinates must be finite")
    return math.hypot(px - gx, py - gy)


def mean_fovea_error(preds: dict, gts: dict, penalty=None, shapes: Optional[dict] = None):
    """Mean Euclidean error over annotated images.

    Images without a prediction score ``penalty`` pixels; by default the image
    diagonal taken from ``shapes[id] = (H, W)``. Returns (mean, per-image dict).
    """
    per_image = {}
    for sid, gt in gts.items():
        if sid in preds and preds[sid] is not None:
            per_image[sid] = fovea_error(preds[sid], gt)
        elif penalty is not None:
            per_image[sid] = float(penalty)
        elif shapes and sid in shapes:
            h, w = shapes[sid]
            per_image[sid] = math.hypot(h, w)
        else:
            raise ValueError(f"no prediction for {sid} and no penalty distance available")
    if not per_image:
        return float("nan"), per_image
    return math.fsum(per_image.values()) / len(per_image), per_image
