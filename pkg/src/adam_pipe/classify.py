"""AMD probability prediction: pluggable backbones, TTA and ensembling."""

from __future__ import annotations

import copy
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
import torch
from torch import nn

from .data_model import FoveaCoordinate
from .errors import ConfigError, DataError
from .preprocess import (
    AugmentationConfig,
    CropSpec,
    apply_histogram_op,
    augment_image,
    crop_macular,
    geometric_augment,
    letterbox,
    sample_rng,
)

log = logging.getLogger(__name__)

DEFAULT_TTA = ["equalize", "adaptive_equalize", "rescale(2,98)"]


@dataclass
class BackboneSpec:
    name: str = "toy"
    input_resolution: tuple = (64, 64)
    optimizer: str = "sgd"
    pretrained_source: Optional[str] = None
    options: dict = field(default_factory=dict)

    def problems(self, prefix="backbone") -> list:
        out = []
        if self.name not in BACKBONES:
            out.append(f"{prefix}.name: unknown backbone {self.name!r} (known: {sorted(BACKBONES)})")
        if len(self.input_resolution) != 2 or min(self.input_resolution) < 32:
            out.append(f"{prefix}.input_resolution must be two sides >= 32")
        if self.optimizer not in ("sgd", "adam"):
            out.append(f"{prefix}.optimizer must be 'sgd' or 'adam'")
        return out


# --- backbones --------------------------------------------------------------

BACKBONES: dict = {}


def register_backbone(name: str):
    def deco(factory: Callable[[BackboneSpec], nn.Module]):
        BACKBONES[name] = factory
        return factory
    return deco


class ToyBackbone(nn.Module):
    """Four conv-BN-ReLU stages, global average pooling and a single logit."""

    def __init__(self, width: int = 16):
        super().__init__()
        chans = [3, width, 2 * width, 4 * width, 4 * width]
        layers = []
        for cin, cout in zip(chans[:-1], chans[1:]):
            layers += [nn.Conv2d(cin, cout, 3, stride=2, padding=1, bias=False), nn.BatchNorm2d(cout), nn.ReLU()]
        self.features = nn.Sequential(*layers)
        self.fc = nn.Linear(chans[-1], 1)

    def forward(self, x):
        return self.fc(self.features(x).mean(dim=(2, 3))).squeeze(1)


@register_backbone("toy")
def _toy(spec: BackboneSpec) -> nn.Module:
    return ToyBackbone(int(spec.options.get("width", 16)))


def _torchvision_factory(arch: str):
    def factory(spec: BackboneSpec) -> nn.Module:
        import torchvision.models as tvm

        net = getattr(tvm, arch)(weights=None)
        if hasattr(net, "fc"):
            net.fc = nn.Linear(net.fc.in_features, 1)
        else:
            last = net.classifier[-1]
            net.classifier[-1] = nn.Linear(last.in_features, 1)
        return _Squeeze(net)
    return factory


class _Squeeze(nn.Module):
    def __init__(self, net):
        super().__init__()
        self.net = net

    def forward(self, x):
        return self.net(x).squeeze(1)


for _arch in ("efficientnet_b4", "efficientnet_b5", "efficientnet_b6", "efficientnet_b7",
              "resnext50_32x4d", "resnext101_32x8d"):
    register_backbone(_arch)(_torchvision_factory(_arch))


def build_backbone(spec: BackboneSpec) -> nn.Module:
    problems = spec.problems()
    if problems:
        raise ConfigError(problems)
    net = BACKBONES[spec.name](spec)
    if spec.pretrained_source:
        state = torch.load(spec.pretrained_source, map_location="cpu", weights_only=True)
        missing, _ = net.load_state_dict(state, strict=False)
        if missing:
            log.info("%s: %d parameters not in pretrained source", spec.name, len(missing))
    return net


# --- classifier wrapper -----------------------------------------------------

def _to_tensor(images: Sequence[np.ndarray]) -> torch.Tensor:
    arr = np.stack([np.moveaxis(im, -1, 0) for im in images]).astype(np.float32)
    return torch.from_numpy(arr / 127.5 - 1.0)


@dataclass
class Classifier:
    """A trained backbone plus what is needed to score raw images."""

    spec: BackboneSpec
    state: dict
    history: list = field(default_factory=list)
    epoch: int = 0
    best_accuracy: Optional[float] = None

    def __post_init__(self):
        self._net = None

    def network(self) -> nn.Module:
        if self._net is None:
            net = build_backbone(BackboneSpec(**{**asdict(self.spec), "pretrained_source": None}))
            net.load_state_dict(self.state)
            net.eval()
            self._net = net
        return self._net

    def predict_proba(self, image: np.ndarray) -> float:
        canvas, _ = letterbox(np.asarray(image), self.spec.input_resolution, order=1)
        with torch.no_grad():
            logit = self.network()(_to_tensor([canvas]))
        return float(torch.sigmoid(logit.double())[0])

    def save(self, directory) -> Path:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        torch.save(self.state, directory / "weights.pt")
        meta = {"spec": asdict(self.spec), "history": self.history, "epoch": self.epoch,
                "best_accuracy": self.best_accuracy}
        (directory / "meta.json").write_text(json.dumps(meta, indent=2))
        return directory

    @classmethod
    def load(cls, directory) -> "Classifier":
        directory = Path(directory)
        try:
            meta = json.loads((directory / "meta.json").read_text())
            state = torch.load(directory / "weights.pt", map_location="cpu", weights_only=True)
        except (OSError, ValueError) as exc:
            raise DataError(f"cannot load classifier checkpoint {directory}: {exc}") from exc
        spec = meta["spec"]
        spec["input_resolution"] = tuple(spec["input_resolution"])
        return cls(BackboneSpec(**spec), state, meta["history"], meta["epoch"], meta["best_accuracy"])


def _accuracy(net: nn.Module, images, labels, batch_size: int = 64) -> float:
    net.eval()
    correct = 0
    with torch.no_grad():
        for i in range(0, len(images), batch_size):
            logits = net(_to_tensor(images[i:i + batch_size]))
            pred = (torch.sigmoid(logits) >= 0.5).long().numpy()
            correct += int((pred == np.asarray(labels[i:i + batch_size])).sum())
    return correct / len(images)


def train_classifier(backbone: BackboneSpec, images: Sequence[np.ndarray], labels: Sequence[int],
                     epochs: int = 20, learning_rate: float = 1e-3, seed: int = 0, *,
                     val_images: Sequence[np.ndarray] = (), val_labels: Sequence[int] = (),
                     batch_size: int = 16, augmentation: Optional[AugmentationConfig] = None,
                     ids: Optional[Sequence[str]] = None) -> Classifier:
    """Train one backbone and keep the epoch with the best validation accuracy.

    Accuracy is measured at threshold 0.5; ties go to the later epoch. Without
    validation data the training accuracy is used.
    """
    labels = [int(v) for v in labels]
    if len(set(labels)) < 2:
        raise DataError("classifier training needs both classes")
    if len(images) != len(labels):
        raise DataError("images and labels differ in length")
    torch.manual_seed(seed)
    net = build_backbone(backbone)
    res = tuple(backbone.input_resolution)
    canvases = [letterbox(np.asarray(im), res, order=1)[0] for im in images]
    val = [letterbox(np.asarray(im), res, order=1)[0] for im in val_images]
    val_labels = [int(v) for v in val_labels]
    ids = list(ids) if ids is not None else [str(i) for i in range(len(images))]

    if backbone.optimizer == "adam":
        opt = torch.optim.Adam(net.parameters(), lr=learning_rate)
    else:
        opt = torch.optim.SGD(net.parameters(), lr=learning_rate, momentum=0.9)
    loss_fn = nn.BCEWithLogitsLoss()

    best = Classifier(copy.deepcopy(backbone), copy.deepcopy(net.state_dict()), [], 0, None)
    best_acc = -1.0
    history = []
    y_all = torch.tensor(labels, dtype=torch.float32)
    for epoch in range(epochs):
        net.train()
        order = np.random.default_rng([seed, epoch]).permutation(len(canvases))
        total = 0.0
        for i in range(0, len(order), batch_size):
            idx = order[i:i + batch_size]
            if len(idx) < 2:
                continue
            batch = [canvases[j] for j in idx]
            if augmentation is not None:
                batch = [_augment(im, augmentation, sample_rng(seed, ids[j], epoch)) for im, j in zip(batch, idx)]
            opt.zero_grad(set_to_none=True)
            loss = loss_fn(net(_to_tensor(batch)), y_all[idx])
            loss.backward()
            opt.step()
            total += loss.item() * len(idx)
        acc = _accuracy(net, val, val_labels) if val else _accuracy(net, canvases, labels)
        history.append({"epoch": epoch, "loss": total / len(order), "val_accuracy": acc})
        log.info("%s epoch %d loss %.4f acc %.4f", backbone.name, epoch, total / len(order), acc)
        if acc >= best_acc:
            best_acc = acc
            best = Classifier(copy.deepcopy(backbone), copy.deepcopy(net.state_dict()), [], epoch + 1, acc)
    best.history = history
    return best


def _augment(image, config: AugmentationConfig, rng) -> np.ndarray:
    image, _ = geometric_augment(image, [], config, rng)
    return augment_image(image, config, rng)


# --- TTA and ensembling -----------------------------------------------------

def tta_predict(model, image: np.ndarray, tta_ops: Sequence[str] = (),
                config: Optional[AugmentationConfig] = None) -> float:
    """Mean probability over the identity view and one view per histogram op."""
    variants = [image] + [apply_histogram_op(op, image, config) for op in tta_ops]
    probs = [model.predict_proba(v) for v in variants]
    return math.fsum(probs) / len(probs)


@dataclass
class EnsembleMember:
    name: str
    zoom: float
    checkpoint: str
    backbone: Optional[BackboneSpec] = None


@dataclass
class EnsembleSpec:
    members: list
    tta_ops: list = field(default_factory=lambda: list(DEFAULT_TTA))

    def save(self, path) -> Path:
        path = Path(path)
        data = {"tta_ops": self.tta_ops,
                "members": [{"name": m.name, "zoom": m.zoom, "checkpoint": str(m.checkpoint)} for m in self.members]}
        path.write_text(json.dumps(data, indent=2))
        return path

    @classmethod
    def load(cls, path) -> "EnsembleSpec":
        path = Path(path)
        data = json.loads(path.read_text())
        members = []
        for m in data["members"]:
            ck = Path(m["checkpoint"])
            members.append(EnsembleMember(m["name"], float(m["zoom"]), str(ck if ck.is_absolute() else path.parent / ck)))
        return cls(members, data.get("tta_ops", []))


@dataclass
class Ensemble:
    """Loaded members: a list of (name, zoom, model) plus the TTA op list."""

    members: list
    tta_ops: list = field(default_factory=list)

    @classmethod
    def from_spec(cls, spec: EnsembleSpec) -> "Ensemble":
        if not spec.members:
            raise ConfigError("ensemble needs at least one member")
        loaded = []
        for m in spec.members:
            try:
                model = Classifier.load(m.checkpoint)
            except DataError as exc:
                raise DataError(f"ensemble member {m.name!r} cannot be loaded: {exc}") from exc
            loaded.append((m.name, m.zoom, model))
        return cls(loaded, list(spec.tta_ops))


def ensemble_predict(ensemble, image: np.ndarray, fovea: Optional[FoveaCoordinate] = None,
                     config: Optional[AugmentationConfig] = None) -> float:
    """Unweighted mean of the members' TTA probabilities on their own macular crops.

    The mean uses ``math.fsum``, which is exactly rounded, so member order
    cannot change the result.
    """
    if isinstance(ensemble, EnsembleSpec):
        ensemble = Ensemble.from_spec(ensemble)
    if not ensemble.members:
        raise ConfigError("ensemble needs at least one member")
    probs = []
    for _name, zoom, model in ensemble.members:
        crop = crop_macular(image, fovea, CropSpec([zoom]))[0]
        probs.append(tta_predict(model, crop, ensemble.tta_ops, config))
    return math.fsum(probs) / len(probs)
