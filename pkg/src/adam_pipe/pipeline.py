"""Train / infer / evaluate / report for a run config, plus prediction file I/O."""

from __future__ import annotations

import csv
import json
import logging
import math
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .classify import (
    Classifier,
    Ensemble,
    EnsembleMember,
    EnsembleSpec,
    ensemble_predict,
    train_classifier,
)
from .config import RunConfig, save_snapshot, to_dict
from .data_model import (
    DatasetManifest,
    FoveaCoordinate,
    LesionKind,
    load_manifest,
    load_sample,
    oversample,
    read_mask,
    write_mask,
)
from .distmap import extract_fovea, save_distance_map
from .errors import ConfigError, DataError
from .gan.training import Checkpoint, infer, parse_task, train, write_losses
from .metrics import auc, dice, f1_detection, mean_dice, mean_fovea_error, roc_curve
from .plotting import plot_error_histogram, plot_loss_curves, plot_roc, plot_scores
from .postprocess import lesion_postprocess, od_postprocess
from .preprocess import CropSpec, crop_macular

log = logging.getLogger(__name__)

CLASSIFICATION_FILE = "classification.csv"
OD_FILE = "od.csv"
FOVEA_FILE = "fovea.csv"


def lesion_file(kind: LesionKind) -> str:
    return f"lesion_{kind.value}.csv"


def prediction_file(task: str) -> str:
    if task == "classify":
        return CLASSIFICATION_FILE
    name, kind = parse_task(task)
    return {"od": OD_FILE, "fovea": FOVEA_FILE}.get(name) or lesion_file(kind)


def _manifest(path, split) -> Optional[DatasetManifest]:
    return load_manifest(path, split) if path else None


def _samples_for(task: str, manifest: DatasetManifest) -> list:
    out = []
    name, kind = (task, None) if task == "classify" else parse_task(task)
    for entry in manifest:
        if name == "classify" and entry.amd is None:
            continue
        if name == "od" and entry.od_mask is None:
            continue
        if name == "fovea" and entry.fovea is None:
            continue
        if name == "lesion" and kind not in entry.lesion_masks:
            continue
        out.append(load_sample(entry))
    return out


# --- train ------------------------------------------------------------------

def run_train(cfg: RunConfig) -> Path:
    if not cfg.manifests.train:
        raise ConfigError("manifests.train is required for training")
    # validate inputs before anything is written
    train_m = load_manifest(cfg.manifests.train, "train")
    val_m = _manifest(cfg.manifests.val, "val")
    run_dir = Path(cfg.output_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    save_snapshot(cfg, run_dir)
    meta = {"software_version": __version__, "task": cfg.task, "distmap_mode": cfg.distmap.mode,
            "lambda_l1": cfg.train.lambda_l1, "optimizer": "adam(beta1=%g)" % cfg.train.beta1}
    (run_dir / "run.json").write_text(json.dumps(meta, indent=2))

    if cfg.task == "classify":
        _train_classify(cfg, train_m, val_m, run_dir)
        return run_dir

    samples = _samples_for(cfg.task, train_m)
    if not samples:
        raise DataError(f"no training samples carry the annotation needed for task {cfg.task}")
    val_samples = _samples_for(cfg.task, val_m) if val_m is not None else []
    train(cfg.task, samples, cfg.train, cfg.generator, cfg.discriminator,
          val_samples=val_samples, augmentation=cfg.augmentation, distmap=cfg.distmap,
          postprocess=cfg.postprocess, run_dir=run_dir, snapshot=to_dict(cfg))
    return run_dir


def _train_classify(cfg: RunConfig, train_m: DatasetManifest, val_m, run_dir: Path) -> None:
    cc = cfg.classify
    if cc.oversample_ratio > 0:
        train_m = oversample(train_m, cc.oversample_ratio, seed=cfg.seed)
    loaded = {}
    train_rows = []
    for entry in train_m:
        if entry.amd is None:
            continue
        if entry.id not in loaded:
            loaded[entry.id] = load_sample(entry)
        train_rows.append((f"{entry.id}#{entry.replica}", loaded[entry.id]))
    if not train_rows:
        raise DataError("no training rows carry an amd label")
    val_samples = _samples_for("classify", val_m) if val_m is not None else []

    members = []
    history_rows = []
    for b_idx, backbone in enumerate(cc.backbones):
        for zoom in cfg.crops.zoom_levels:
            name = f"{backbone.name}-{b_idx}_z{zoom:.2f}"
            crop = CropSpec([zoom])
            images = [crop_macular(s.image, s.fovea, crop)[0] for _, s in train_rows]
            labels = [s.amd_label for _, s in train_rows]
            val_images = [crop_macular(s.image, s.fovea, crop)[0] for s in val_samples]
            val_labels = [s.amd_label for s in val_samples]
            model = train_classifier(backbone, images, labels, cc.epochs, cc.learning_rate, cfg.seed,
                                     val_images=val_images, val_labels=val_labels,
                                     batch_size=cc.batch_size, augmentation=cfg.augmentation,
                                     ids=[rid for rid, _ in train_rows])
            ckpt = model.save(run_dir / "members" / name)
            members.append(EnsembleMember(name, zoom, str(ckpt.relative_to(run_dir))))
            history_rows += [{"member": name, **h} for h in model.history]
    EnsembleSpec(members, list(cc.tta_ops)).save(run_dir / "ensemble.json")
    with open(run_dir / "classify_history.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["member", "epoch", "loss", "val_accuracy"])
        writer.writeheader()
        writer.writerows(history_rows)


# --- infer ------------------------------------------------------------------

def _resolve_gan_checkpoint(path) -> Checkpoint:
    path = Path(path)
    if (path / "ckpt-best").is_dir():
        path = path / "ckpt-best"
    return Checkpoint.load(path)


def run_infer(cfg: RunConfig, checkpoint, manifest_path, out_dir) -> Path:
    manifest = load_manifest(manifest_path, "test")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if cfg.task == "classify":
        return _infer_classify(cfg, checkpoint, manifest, out_dir)

    ckpt = _resolve_gan_checkpoint(checkpoint)
    if ckpt.task != cfg.task:
        raise ConfigError(f"checkpoint was trained for {ckpt.task!r}, config task is {cfg.task!r}")
    name, kind = parse_task(cfg.task)
    pp = cfg.postprocess
    rows = []
    for entry in manifest:
        sample = load_sample(entry)
        pred = infer(ckpt, sample.image)
        h, w = sample.shape
        if name == "fovea":
            (out_dir / "maps").mkdir(exist_ok=True)
            save_distance_map(out_dir / "maps" / f"{entry.id}.png", pred)
            try:
                p = extract_fovea(pred)
                rows.append([entry.id, f"{p.x:.3f}", f"{p.y:.3f}"])
            except DataError:
                log.warning("%s: no fovea signal in prediction", entry.id)
                rows.append([entry.id, "", ""])
            continue
        if name == "od":
            detected, mask = od_postprocess(pred, pp.binarize_threshold, pp.od_min_area_fraction * h * w,
                                            pp.connectivity)
        else:
            detected, mask = lesion_postprocess(pred, pp.binarize_threshold, pp.lesion_min_area_fraction * h * w)
        mask_dir = out_dir / ("masks_od" if name == "od" else f"masks_{kind.value}")
        mask_dir.mkdir(exist_ok=True)
        write_mask(mask_dir / f"{entry.id}.png", mask)
        rows.append([entry.id, f"{mask_dir.name}/{entry.id}.png", int(detected)])

    path = out_dir / prediction_file(cfg.task)
    header = ["id", "fovea_x", "fovea_y"] if name == "fovea" else ["id", "mask", "detected"]
    _write_rows(path, header, rows)
    return path


def _infer_classify(cfg: RunConfig, checkpoint, manifest: DatasetManifest, out_dir: Path) -> Path:
    path = Path(checkpoint)
    spec = EnsembleSpec.load(path / "ensemble.json" if path.is_dir() else path)
    ensemble = Ensemble.from_spec(spec)
    rows = []
    for entry in manifest:
        sample = load_sample(entry)
        p = ensemble_predict(ensemble, sample.image, sample.fovea, cfg.augmentation)
        rows.append([entry.id, f"{p:.6f}"])
    path = out_dir / CLASSIFICATION_FILE
    _write_rows(path, ["id", "probability"], rows)
    return path


def _write_rows(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _read_rows(path) -> list:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# --- ground-truth predictions (oracle) ---------------------------------------

def write_ground_truth_predictions(manifest_path, out_dir) -> Path:
    """Write the manifest's own annotations in prediction format (a perfect submission)."""
    manifest = load_manifest(manifest_path, "test")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cls_rows, od_rows, fov_rows = [], [], []
    lesion_rows = {k: [] for k in LesionKind}
    for e in manifest:
        if e.amd is not None:
            cls_rows.append([e.id, f"{float(e.amd):.6f}"])
        if e.od_mask is not None:
            m = read_mask(e.od_mask)
            (out_dir / "masks_od").mkdir(exist_ok=True)
            write_mask(out_dir / "masks_od" / f"{e.id}.png", m)
            od_rows.append([e.id, f"masks_od/{e.id}.png", int(m.any())])
        if e.fovea is not None:
            fov_rows.append([e.id, repr(e.fovea.x), repr(e.fovea.y)])
        for k, p in e.lesion_masks.items():
            m = read_mask(p)
            (out_dir / f"masks_{k.value}").mkdir(exist_ok=True)
            write_mask(out_dir / f"masks_{k.value}" / f"{e.id}.png", m)
            lesion_rows[k].append([e.id, f"masks_{k.value}/{e.id}.png", int(m.any())])
    if cls_rows:
        _write_rows(out_dir / CLASSIFICATION_FILE, ["id", "probability"], cls_rows)
    if od_rows:
        _write_rows(out_dir / OD_FILE, ["id", "mask", "detected"], od_rows)
    if fov_rows:
        _write_rows(out_dir / FOVEA_FILE, ["id", "fovea_x", "fovea_y"], fov_rows)
    for k, rows in lesion_rows.items():
        if rows:
            _write_rows(out_dir / lesion_file(k), ["id", "mask", "detected"], rows)
    return out_dir


# --- evaluate ---------------------------------------------------------------

def run_evaluate(predictions_dir, manifest_path, out_dir, cfg: Optional[RunConfig] = None) -> dict:
    """Score every prediction file present in ``predictions_dir`` against the manifest.

    Writes ``report.json``, one per-image CSV per task and the figures.
    """
    cfg = cfg or RunConfig()
    pred_dir = Path(predictions_dir)
    if not pred_dir.is_dir():
        raise DataError(f"predictions directory not found: {pred_dir}")
    manifest = load_manifest(manifest_path, "test")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    report = {"manifest": str(manifest_path), "tasks": {}}
    figures = []
    entries = manifest.entries

    path = pred_dir / CLASSIFICATION_FILE
    if path.is_file():
        rows = {r["id"]: float(r["probability"]) for r in _read_rows(path)}
        labelled = [e for e in entries if e.amd is not None]
        missing = [e.id for e in labelled if e.id not in rows]
        if missing:
            raise DataError(f"{path.name}: no prediction for {missing[:5]}")
        scores = [rows[e.id] for e in labelled]
        labels = [e.amd for e in labelled]
        task = {"n": len(labelled)}
        if len(set(labels)) == 2:
            task["auc"] = auc(scores, labels)
            fpr, tpr = roc_curve(scores, labels)
            figures.append(str(plot_roc(fpr, tpr, task["auc"], out_dir / "roc.png")))
        else:
            task["auc"] = None
            task["note"] = "AUC undefined: only one class in the manifest"
        report["tasks"]["classification"] = task
        _write_rows(out_dir / "per_image_classification.csv", ["id", "label", "probability"],
                    [[e.id, e.amd, f"{rows[e.id]:.6f}"] for e in labelled])

    path = pred_dir / OD_FILE
    if path.is_file():
        report["tasks"]["od"] = _evaluate_masks(path, [(e.id, e.od_mask) for e in entries if e.od_mask is not None],
                                                "od", out_dir, cfg)

    path = pred_dir / FOVEA_FILE
    if path.is_file():
        preds = {}
        for r in _read_rows(path):
            if r["fovea_x"] and r["fovea_y"]:
                preds[r["id"]] = FoveaCoordinate(float(r["fovea_x"]), float(r["fovea_y"]))
        gts = {e.id: e.fovea for e in entries if e.fovea is not None}
        shapes = {}
        if cfg.metrics.fovea_penalty is None:
            from PIL import Image
            for e in entries:
                if e.fovea is not None and e.id not in preds:
                    with Image.open(e.image) as im:
                        shapes[e.id] = (im.height, im.width)
        mean_err, per = mean_fovea_error(preds, gts, cfg.metrics.fovea_penalty, shapes)
        report["tasks"]["fovea"] = {"n": len(per), "mean_euclidean_error": mean_err,
                                    "missing_predictions": sorted(set(gts) - set(preds))}
        _write_rows(out_dir / "per_image_fovea.csv", ["id", "error_px"], [[k, f"{v:.4f}"] for k, v in per.items()])
        figures.append(str(plot_error_histogram(per.values(), out_dir / "fovea_errors.png")))

    lesion_scores = {}
    for kind in LesionKind:
        path = pred_dir / lesion_file(kind)
        if path.is_file():
            gt = [(e.id, e.lesion_masks[kind]) for e in entries if kind in e.lesion_masks]
            report["tasks"][f"lesion:{kind.value}"] = res = _evaluate_masks(path, gt, kind.value, out_dir, cfg)
            lesion_scores[kind.value] = res["dice"]
    if lesion_scores:
        figures.append(str(plot_scores(lesion_scores, out_dir / "lesion_dice.png")))

    report["figures"] = figures
    (out_dir / "report.json").write_text(json.dumps(report, indent=2, default=_json_default))
    return report


def _json_default(v):
    if isinstance(v, float) and math.isnan(v):
        return None
    raise TypeError(type(v))


def _evaluate_masks(path: Path, gt_items, label: str, out_dir: Path, cfg: RunConfig) -> dict:
    rows = {r["id"]: r for r in _read_rows(path)}
    pairs, pred_flags, gt_flags, per = [], [], [], []
    for sid, gt_path in gt_items:
        if sid not in rows:
            raise DataError(f"{path.name}: no prediction for {sid}")
        gt = read_mask(gt_path)
        r = rows[sid]
        mp = Path(r["mask"]) if r.get("mask") else None
        if mp is not None and not mp.is_absolute():
            mp = path.parent / mp
        pred = read_mask(mp) if mp is not None and mp.is_file() else np.zeros_like(gt)
        if pred.shape != gt.shape:
            raise DataError(f"{sid}: predicted {label} mask {pred.shape} vs ground truth {gt.shape}")
        detected = bool(int(r.get("detected") or int(pred.any())))
        pairs.append((pred, gt))
        pred_flags.append(detected)
        gt_flags.append(bool(gt.any()))
        per.append([sid, f"{dice(pred, gt):.6f}", int(detected), int(gt.any())])
    _write_rows(out_dir / f"per_image_{label}.csv", ["id", "dice", "detected", "present"], per)
    return {"n": len(pairs), "dice": mean_dice(pairs, cfg.metrics.empty_dice),
            "detection_f1": f1_detection(pred_flags, gt_flags)}


# --- report -----------------------------------------------------------------

def run_report(source, out_dir) -> list:
    """Render figures for a training run (loss curves) and/or an evaluation (score summary)."""
    source = Path(source)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    made = []
    losses = source / "losses.csv"
    if losses.is_file():
        history = [{k: (int(v) if k == "epoch" else float(v)) for k, v in r.items()} for r in _read_rows(losses)]
        if history:
            made.append(plot_loss_curves(history, out_dir / "loss_curves.png"))
    hist = source / "classify_history.csv"
    if hist.is_file():
        rows = _read_rows(hist)
        by_member = {}
        for r in rows:
            by_member.setdefault(r["member"], []).append(float(r["val_accuracy"]))
        made.append(plot_scores({m: max(v) for m, v in by_member.items()}, out_dir / "member_accuracy.png",
                                ylabel="best validation accuracy"))
    report = source / "report.json"
    if report.is_file():
        data = json.loads(report.read_text())
        summary = []
        for task, res in data["tasks"].items():
            for key, val in res.items():
                if isinstance(val, (int, float)) and not isinstance(val, bool):
                    summary.append([task, key, val])
        _write_rows(out_dir / "summary.csv", ["task", "metric", "value"], summary)
        made.append(out_dir / "summary.csv")
        scores = {t: r["dice"] for t, r in data["tasks"].items() if isinstance(r.get("dice"), float)}
        if scores:
            made.append(plot_scores(scores, out_dir / "dice_summary.png"))
    if not made:
        raise DataError(f"{source}: nothing to report (no losses.csv, classify_history.csv or report.json)")
    return made
