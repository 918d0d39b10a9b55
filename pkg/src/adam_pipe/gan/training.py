"""Alternating D/G training, checkpoints and inference for the translation GAN."""

from __future__ import annotations

import copy
import csv
import json
import logging
import math
import os
import shutil
import tempfile
import threading
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
import torch

from ..data_model import FundusSample, LesionKind
from ..distmap import DistmapConfig, build_target, extract_fovea
from ..errors import ConfigError, DataError, NumericError
from ..metrics import dice, fovea_error
from ..postprocess import PostprocessConfig, lesion_postprocess, od_postprocess
from ..preprocess import (
    AugmentationConfig,
    Letterbox,
    augment_image,
    geometric_augment,
    invert_green_channel,
    letterbox,
    sample_rng,
    unletterbox,
)
from .losses import combined_generator_objective, discriminator_loss, generator_adversarial_loss, l1_loss
from .networks import (
    Discriminator,
    DiscriminatorSpec,
    Generator,
    GeneratorSpec,
    build_discriminator,
    build_generator,
    init_weights,
)

log = logging.getLogger(__name__)

LOSS_COLUMNS = ("epoch", "d_loss", "g_adv", "g_l1", "val_score")


@dataclass
class TrainConfig:
    lambda_l1: float = 100.0
    learning_rate: float = 1e-4
    lr_halving_period: int = 50
    epochs: int = 200
    batch_size: int = 4
    resolution: tuple = (640, 640)
    init_mean: float = 0.0
    init_std: float = 0.02
    seed: int = 0
    warm_start: Optional[str] = None
    beta1: float = 0.5
    beta2: float = 0.999
    max_steps: Optional[int] = None
    augment: bool = True

    def problems(self, prefix="train") -> list:
        out = []
        if self.lambda_l1 < 0:
            out.append(f"{prefix}.lambda_l1 must be >= 0")
        if self.learning_rate <= 0:
            out.append(f"{prefix}.learning_rate must be > 0")
        if self.lr_halving_period < 1:
            out.append(f"{prefix}.lr_halving_period must be >= 1")
        if self.epochs < 0:
            out.append(f"{prefix}.epochs must be >= 0")
        if self.batch_size < 1:
            out.append(f"{prefix}.batch_size must be >= 1")
        if len(self.resolution) != 2 or any(int(v) % 4 or int(v) < 4 for v in self.resolution):
            out.append(f"{prefix}.resolution must be two positive multiples of 4, got {list(self.resolution)}")
        if self.init_std < 0:
            out.append(f"{prefix}.init_std must be >= 0")
        if self.max_steps is not None and self.max_steps < 0:
            out.append(f"{prefix}.max_steps must be >= 0")
        return out


def learning_rate_at(epoch: int, config: TrainConfig) -> float:
    return config.learning_rate * 0.5 ** (epoch // config.lr_halving_period)


# --- tasks ------------------------------------------------------------------

def parse_task(task: str):
    if task in ("od", "fovea"):
        return task, None
    if task.startswith("lesion:"):
        try:
            return "lesion", LesionKind(task.split(":", 1)[1])
        except ValueError:
            pass
    raise ConfigError(f"task must be 'od', 'fovea' or 'lesion:<kind>', got {task!r}")


def input_channels(task: str) -> int:
    return 1 if parse_task(task)[0] == "od" else 3


def to_network_input(task: str, image: np.ndarray) -> np.ndarray:
    """uint8 H x W x 3 image -> float32 C x H x W in [-1, 1]."""
    if parse_task(task)[0] == "od":
        arr = invert_green_channel(image)[None].astype(np.float32)
    else:
        arr = np.moveaxis(image, -1, 0).astype(np.float32)
    return arr / 127.5 - 1.0


def make_pair(task: str, sample: FundusSample, resolution, *, augmentation: Optional[AugmentationConfig] = None,
              rng: Optional[np.random.Generator] = None, distmap: Optional[DistmapConfig] = None):
    """Build one (input, target) pair at training resolution, both scaled to [-1, 1]."""
    name, kind = parse_task(task)
    distmap = distmap or DistmapConfig()
    image, box = letterbox(sample.image, resolution, order=1)
    if name == "fovea":
        if sample.fovea is None:
            raise DataError(f"{sample.id}: no fovea annotation")
        target = box.to_canvas(sample.fovea)
    else:
        src = sample.od_mask if name == "od" else sample.lesion_masks.get(kind)
        if src is None:
            raise DataError(f"{sample.id}: no {task} mask")
        target = letterbox(src.astype(np.uint8), resolution, order=0)[0]

    if augmentation is not None and rng is not None:
        image, (target,) = geometric_augment(image, [target], augmentation, rng)
        aug = augmentation
        if name == "od" and "match" in aug.histogram_ops:
            aug = _without_match(aug)
        image = augment_image(image, aug, rng)

    h, w = image.shape[:2]
    if name == "fovea":
        y = build_target(h, w, target, distmap.radius_for(h, w), distmap.mode).values
    else:
        y = target.astype(np.float64)
    return to_network_input(task, image), (2.0 * y - 1.0).astype(np.float32)[None]


def _without_match(aug: AugmentationConfig) -> AugmentationConfig:
    out = copy.deepcopy(aug)
    out.histogram_ops = [o for o in aug.histogram_ops if o != "match"]
    return out


# --- checkpoints ------------------------------------------------------------

def _clone_state(module_or_state) -> dict:
    state = module_or_state.state_dict() if hasattr(module_or_state, "state_dict") else module_or_state
    return copy.deepcopy(state)


@dataclass
class Checkpoint:
    task: str
    generator_spec: GeneratorSpec
    discriminator_spec: DiscriminatorSpec
    generator_state: dict
    discriminator_state: dict
    optimizer_states: dict = field(default_factory=dict)
    epoch: int = 0
    best_score: Optional[float] = None
    resolution: tuple = (640, 640)
    config: dict = field(default_factory=dict)

    def __post_init__(self):
        self._lock = threading.Lock()
        self._generator = None

    def generator(self) -> Generator:
        with self._lock:
            if self._generator is None:
                g = build_generator(self.generator_spec)
                g.load_state_dict(self.generator_state)
                g.eval()
                self._generator = g
            return self._generator

    def discriminator(self) -> Discriminator:
        d = build_discriminator(self.discriminator_spec)
        d.load_state_dict(self.discriminator_state)
        return d

    def save(self, directory) -> Path:
        """Write atomically: build in a temp dir, then swap it into place."""
        directory = Path(directory)
        directory.parent.mkdir(parents=True, exist_ok=True)
        tmp = Path(tempfile.mkdtemp(prefix=f".{directory.name}-", dir=directory.parent))
        torch.save({
            "generator": self.generator_state,
            "discriminator": self.discriminator_state,
            "optimizers": self.optimizer_states,
        }, tmp / "weights.pt")
        meta = {
            "task": self.task,
            "generator_spec": asdict(self.generator_spec),
            "discriminator_spec": asdict(self.discriminator_spec),
            "epoch": self.epoch,
            "best_score": self.best_score,
            "resolution": list(self.resolution),
            "config": self.config,
        }
        (tmp / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True))
        old = None
        if directory.exists():
            old = directory.with_name(f".{directory.name}-old-{os.getpid()}")
            os.replace(directory, old)
        os.replace(tmp, directory)
        if old is not None:
            shutil.rmtree(old, ignore_errors=True)
        return directory

    @classmethod
    def load(cls, directory) -> "Checkpoint":
        directory = Path(directory)
        if not (directory / "meta.json").is_file() or not (directory / "weights.pt").is_file():
            raise DataError(f"missing checkpoint: {directory}")
        meta = json.loads((directory / "meta.json").read_text())
        weights = torch.load(directory / "weights.pt", map_location="cpu", weights_only=False)
        return cls(
            task=meta["task"],
            generator_spec=GeneratorSpec(**meta["generator_spec"]),
            discriminator_spec=DiscriminatorSpec(**meta["discriminator_spec"]),
            generator_state=weights["generator"],
            discriminator_state=weights["discriminator"],
            optimizer_states=weights.get("optimizers", {}),
            epoch=meta["epoch"],
            best_score=meta["best_score"],
            resolution=tuple(meta["resolution"]),
            config=meta.get("config", {}),
        )


# --- inference --------------------------------------------------------------

def infer_batch(checkpoint: Checkpoint, inputs: np.ndarray) -> np.ndarray:
    """Network-ready inputs (N x C x H x W in [-1, 1]) -> maps in [0, 1]."""
    g = checkpoint.generator()
    with torch.no_grad():
        out = g(torch.from_numpy(np.ascontiguousarray(inputs)).float())
    return ((out.numpy()[:, 0].astype(np.float64) + 1.0) / 2.0).clip(0.0, 1.0)


def infer(checkpoint: Checkpoint, image: np.ndarray) -> np.ndarray:
    """Letterbox ``image`` to the training resolution, run G, map back to the original frame."""
    if checkpoint is None:
        raise DataError("missing checkpoint")
    canvas, box = letterbox(np.asarray(image), checkpoint.resolution, order=1)
    out = infer_batch(checkpoint, to_network_input(checkpoint.task, canvas)[None])[0]
    return unletterbox(out, box, order=1).clip(0.0, 1.0)


# --- validation -------------------------------------------------------------

def validation_score(task: str, checkpoint: Checkpoint, samples: Sequence[FundusSample],
                     postprocess: PostprocessConfig, distmap: DistmapConfig) -> float:
    """Higher is better: mean Dice for masks, negative mean pixel error for the fovea."""
    name, kind = parse_task(task)
    scores = []
    res = checkpoint.resolution
    for s in samples:
        canvas, box = letterbox(s.image, res, order=1)
        pred = infer_batch(checkpoint, to_network_input(task, canvas)[None])[0]
        if name == "fovea":
            try:
                p = box.from_canvas(extract_fovea(pred))
                scores.append(-fovea_error(p, s.fovea))
            except DataError:
                scores.append(-math.hypot(*s.shape))
            continue
        gt = letterbox((s.od_mask if name == "od" else s.lesion_masks[kind]).astype(np.uint8), res, order=0)[0]
        area = res[0] * res[1]
        if name == "od":
            _, mask = od_postprocess(pred, postprocess.binarize_threshold,
                                     postprocess.od_min_area_fraction * area, postprocess.connectivity)
        else:
            _, mask = lesion_postprocess(pred, postprocess.binarize_threshold,
                                         postprocess.lesion_min_area_fraction * area)
        scores.append(dice(mask, gt))
    return float(np.mean(scores))


# --- training ---------------------------------------------------------------

@dataclass
class TrainResult:
    best: Checkpoint
    last: Checkpoint
    history: list


def _batches(n: int, batch_size: int, rng: np.random.Generator) -> list:
    order = rng.permutation(n)
    if n <= batch_size:
        return [order]
    # drop the ragged tail: BatchNorm on 1x1 maps needs >1 sample per batch
    return [order[i:i + batch_size] for i in range(0, n - batch_size + 1, batch_size)]


def _check_finite(value: torch.Tensor, what: str, epoch: int, step: int) -> None:
    if not torch.isfinite(value).all():
        raise NumericError(f"non-finite {what} at epoch {epoch}, step {step}: {value.item()}")


def _apply_warm_start(path, g: Generator, d: Discriminator) -> None:
    src = Checkpoint.load(path)
    try:
        g.load_state_dict(src.generator_state)
        d.load_state_dict(src.discriminator_state)
    except RuntimeError as exc:
        raise ConfigError(f"warm_start checkpoint {path} is incompatible: {exc}") from None


def write_losses(path, history: Sequence[dict]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=LOSS_COLUMNS)
        writer.writeheader()
        for row in history:
            writer.writerow({k: (repr(row[k]) if isinstance(row[k], float) else row[k]) for k in LOSS_COLUMNS})


def train(task: str, samples: Sequence[FundusSample], config: TrainConfig,
          generator_spec: Optional[GeneratorSpec] = None,
          discriminator_spec: Optional[DiscriminatorSpec] = None, *,
          val_samples: Sequence[FundusSample] = (),
          augmentation: Optional[AugmentationConfig] = None,
          distmap: Optional[DistmapConfig] = None,
          postprocess: Optional[PostprocessConfig] = None,
          run_dir=None, snapshot: Optional[dict] = None,
          on_epoch: Optional[Callable[[dict], None]] = None) -> TrainResult:
    """Train one GAN task.

    Each step updates D once on a real/fake batch (fakes detached from G),
    then G once on the non-saturating adversarial term plus ``lambda_l1``
    times L1. The learning rate halves every ``lr_halving_period`` epochs.
    The checkpoint with the best validation score is kept; without
    validation data the training L1 (negated) stands in for the score.
    """
    problems = config.problems()
    if problems:
        raise ConfigError(problems)
    if not samples:
        raise DataError("empty training set")
    parse_task(task)
    distmap = distmap or DistmapConfig()
    postprocess = postprocess or PostprocessConfig()
    resolution = tuple(int(v) for v in config.resolution)
    generator_spec = generator_spec or GeneratorSpec()
    generator_spec = copy.deepcopy(generator_spec)
    generator_spec.in_channels = input_channels(task)
    generator_spec.out_channels = 1
    discriminator_spec = copy.deepcopy(discriminator_spec or DiscriminatorSpec())
    discriminator_spec.in_channels = 1 + (generator_spec.in_channels if discriminator_spec.conditional else 0)

    torch.manual_seed(config.seed)
    g = init_weights(build_generator(generator_spec), config.init_mean, config.init_std, config.seed)
    d = init_weights(build_discriminator(discriminator_spec), config.init_mean, config.init_std, config.seed + 1)
    if config.warm_start:
        _apply_warm_start(config.warm_start, g, d)
    betas = (config.beta1, config.beta2)
    opt_g = torch.optim.Adam(g.parameters(), lr=config.learning_rate, betas=betas)
    opt_d = torch.optim.Adam(d.parameters(), lr=config.learning_rate, betas=betas)

    augment = augmentation if (config.augment and augmentation is not None) else None
    fixed_pairs = None
    if augment is None:
        fixed_pairs = [make_pair(task, s, resolution, distmap=distmap) for s in samples]

    def snapshot_checkpoint(epoch, score):
        return Checkpoint(task, copy.deepcopy(generator_spec), copy.deepcopy(discriminator_spec),
                          _clone_state(g), _clone_state(d),
                          {"generator": _clone_state(opt_g), "discriminator": _clone_state(opt_d)},
                          epoch, score, resolution, snapshot or {})

    run_dir = Path(run_dir) if run_dir is not None else None
    if run_dir is not None:
        run_dir.mkdir(parents=True, exist_ok=True)

    history = []
    best = snapshot_checkpoint(0, None)
    best_score = -math.inf
    steps = 0
    max_steps = config.max_steps
    for epoch in range(config.epochs):
        if max_steps is not None and steps >= max_steps:
            break
        lr = learning_rate_at(epoch, config)
        for opt in (opt_g, opt_d):
            for group in opt.param_groups:
                group["lr"] = lr
        g.train()
        d.train()
        sums = {"d_loss": 0.0, "g_adv": 0.0, "g_l1": 0.0}
        n_steps = 0
        for step, idx in enumerate(_batches(len(samples), config.batch_size, np.random.default_rng([config.seed, epoch]))):
            if max_steps is not None and steps >= max_steps:
                break
            if fixed_pairs is not None:
                pairs = [fixed_pairs[i] for i in idx]
            else:
                pairs = [make_pair(task, samples[i], resolution, augmentation=augment,
                                   rng=sample_rng(config.seed, samples[i].id, epoch), distmap=distmap)
                         for i in idx]
            x = torch.from_numpy(np.stack([p[0] for p in pairs]))
            y = torch.from_numpy(np.stack([p[1] for p in pairs]))
            d_in_real = torch.cat([y, x], 1) if discriminator_spec.conditional else y

            fake = g(x)
            d_in_fake = torch.cat([fake, x], 1) if discriminator_spec.conditional else fake

            opt_d.zero_grad(set_to_none=True)
            d_real = torch.sigmoid(d(d_in_real))
            d_fake = torch.sigmoid(d(d_in_fake.detach()))
            loss_d = discriminator_loss(d_real, d_fake)
            _check_finite(loss_d, "discriminator loss", epoch, step)
            loss_d.backward()
            opt_d.step()

            opt_g.zero_grad(set_to_none=True)
            adv = generator_adversarial_loss(torch.sigmoid(d(d_in_fake)))
            rec = l1_loss(fake, y)
            loss_g = combined_generator_objective(adv, rec, config.lambda_l1)
            _check_finite(loss_g, "generator loss", epoch, step)
            loss_g.backward()
            # only G's optimizer steps here, so D's stray gradients are discarded next D step
            opt_g.step()

            sums["d_loss"] += loss_d.item()
            sums["g_adv"] += adv.item()
            sums["g_l1"] += rec.item()
            n_steps += 1
            steps += 1

        row = {"epoch": epoch, **{k: v / max(n_steps, 1) for k, v in sums.items()}}
        g.eval()
        current = snapshot_checkpoint(epoch + 1, None)
        if val_samples:
            score = validation_score(task, current, val_samples, postprocess, distmap)
        else:
            score = -row["g_l1"]
        row["val_score"] = float(score)
        current.best_score = float(score)
        history.append(row)
        if score >= best_score:
            best_score = score
            best = current
        log.info("epoch %d lr %.3g d %.4f g_adv %.4f g_l1 %.4f val %.4f",
                 epoch, lr, row["d_loss"], row["g_adv"], row["g_l1"], score)
        if on_epoch is not None:
            on_epoch(row)

    last = snapshot_checkpoint(len(history), history[-1]["val_score"] if history else None)
    if not history:
        best = last
    best.best_score = best_score if history else None
    if run_dir is not None:
        best.save(run_dir / "ckpt-best")
        last.save(run_dir / "ckpt-last")
        write_losses(run_dir / "losses.csv", history)
    return TrainResult(best, last, history)
