"""Report figures rendered straight to files (Agg backend, no display needed)."""

from __future__ import annotations

import contextlib
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "figure.figsize": (5.0, 3.6),
    "figure.dpi": 120,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "font.size": 10,
    "savefig.bbox": "tight",
}


@contextlib.contextmanager
def _figure(path):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        try:
            yield fig, ax
            Path(path).parent.mkdir(parents=True, exist_ok=True)
            fig.savefig(path)
        finally:
            plt.close(fig)


def plot_roc(fpr, tpr, auc_value: float, path) -> Path:
    with _figure(path) as (fig, ax):
        ax.plot(fpr, tpr, lw=1.8, label=f"AUC = {auc_value:.4f}")
        ax.plot([0, 1], [0, 1], ls="--", lw=0.8, color="grey")
        ax.set_xlabel("false positive rate")
        ax.set_ylabel("true positive rate")
        ax.set_xlim(0, 1)
        ax.set_ylim(0, 1.02)
        ax.legend(loc="lower right", frameon=False)
    return Path(path)


def plot_error_histogram(errors, path, xlabel="Euclidean error (px)") -> Path:
    errors = np.asarray(list(errors), dtype=float)
    with _figure(path) as (fig, ax):
        bins = max(5, min(30, errors.size))
        ax.hist(errors, bins=bins, color="tab:blue", alpha=0.8)
        if errors.size:
            ax.axvline(errors.mean(), color="k", lw=1, ls="--", label=f"mean {errors.mean():.2f}")
            ax.legend(frameon=False)
        ax.set_xlabel(xlabel)
        ax.set_ylabel("images")
    return Path(path)


def plot_scores(scores: dict, path, ylabel="Dice") -> Path:
    with _figure(path) as (fig, ax):
        names = list(scores)
        ax.bar(range(len(names)), [scores[n] for n in names], color="tab:green", alpha=0.8)
        ax.set_xticks(range(len(names)))
        ax.set_xticklabels(names, rotation=30, ha="right")
        ax.set_ylim(0, 1.05)
        ax.set_ylabel(ylabel)
    return Path(path)


def plot_loss_curves(history, path) -> Path:
    """``history``: rows with epoch, d_loss, g_adv, g_l1 and val_score."""
    epochs = [r["epoch"] for r in history]
    with plt.rc_context(STYLE):
        fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.4))
        try:
            for key in ("d_loss", "g_adv", "g_l1"):
                ax1.plot(epochs, [r[key] for r in history], label=key)
            ax1.set_xlabel("epoch")
            ax1.set_ylabel("loss")
            ax1.legend(frameon=False)
            ax2.plot(epochs, [r["val_score"] for r in history], color="tab:purple")
            ax2.set_xlabel("epoch")
            ax2.set_ylabel("validation score")
            Path(path).parent.mkdir(parents=True, exist_ok=True)
            fig.savefig(path)
        finally:
            plt.close(fig)
    return Path(path)
