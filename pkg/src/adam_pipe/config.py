"""Run configuration: YAML file, dotted-path overrides and the persisted snapshot."""

from __future__ import annotations

import dataclasses
import os
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import yaml

from .classify import DEFAULT_TTA, BackboneSpec
from .data_model import LesionKind
from .distmap import DistmapConfig
from .errors import ConfigError
from .gan.networks import DiscriminatorSpec, GeneratorSpec
from .gan.training import TrainConfig
from .metrics import MetricsConfig
from .postprocess import PostprocessConfig
from .preprocess import AugmentationConfig, CropSpec

SEED_ENV = "ADAM_PIPE_SEED"


@dataclass
class ManifestPaths:
    train: Optional[str] = None
    val: Optional[str] = None
    test: Optional[str] = None


@dataclass
class ClassifyConfig:
    backbones: list = field(default_factory=lambda: [BackboneSpec()])
    epochs: int = 20
    learning_rate: float = 1e-3
    batch_size: int = 16
    oversample_ratio: float = 1.0
    tta_ops: list = field(default_factory=lambda: list(DEFAULT_TTA))

    def problems(self, prefix="classify") -> list:
        out = []
        if not self.backbones:
            out.append(f"{prefix}.backbones must list at least one backbone")
        for i, b in enumerate(self.backbones):
            out += b.problems(f"{prefix}.backbones[{i}]")
        if self.epochs < 0:
            out.append(f"{prefix}.epochs must be >= 0")
        if self.learning_rate <= 0:
            out.append(f"{prefix}.learning_rate must be > 0")
        if self.oversample_ratio < 0:
            out.append(f"{prefix}.oversample_ratio must be >= 0 (0 disables oversampling)")
        return out


@dataclass
class RunConfig:
    task: str = "fovea"
    manifests: ManifestPaths = field(default_factory=ManifestPaths)
    output_dir: str = "runs/default"
    seed: int = 0
    augmentation: AugmentationConfig = field(default_factory=AugmentationConfig)
    crops: CropSpec = field(default_factory=CropSpec)
    distmap: DistmapConfig = field(default_factory=DistmapConfig)
    generator: GeneratorSpec = field(default_factory=GeneratorSpec)
    discriminator: DiscriminatorSpec = field(default_factory=DiscriminatorSpec)
    train: TrainConfig = field(default_factory=TrainConfig)
    postprocess: PostprocessConfig = field(default_factory=PostprocessConfig)
    metrics: MetricsConfig = field(default_factory=MetricsConfig)
    classify: ClassifyConfig = field(default_factory=ClassifyConfig)

    def problems(self) -> list:
        out = []
        valid_tasks = {"classify", "od", "fovea"} | {f"lesion:{k.value}" for k in LesionKind}
        if self.task not in valid_tasks:
            out.append(f"task must be one of {sorted(valid_tasks)}, got {self.task!r}")
        for name in ("augmentation", "crops", "distmap", "generator", "discriminator",
                     "train", "postprocess", "metrics", "classify"):
            out += getattr(self, name).problems(name)
        return out


# --- (de)serialisation ------------------------------------------------------

def to_dict(obj) -> Any:
    if dataclasses.is_dataclass(obj):
        return {f.name: to_dict(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, (list, tuple)):
        return [to_dict(v) for v in obj]
    if isinstance(obj, dict):
        return {str(k): to_dict(v) for k, v in obj.items()}
    if isinstance(obj, Path):
        return str(obj)
    return obj


_LIST_ITEM_TYPES = {
    (ClassifyConfig, "backbones"): BackboneSpec,
}
_TUPLE_FIELDS = {
    (TrainConfig, "resolution"), (BackboneSpec, "input_resolution"),
}


def from_dict(cls, data, path: str = "", problems: Optional[list] = None):
    """Build dataclass ``cls`` from plain data, collecting every problem instead of stopping at the first."""
    top = problems is None
    problems = [] if top else problems
    if data is None:
        data = {}
    if not isinstance(data, dict):
        problems.append(f"{path or 'config'}: expected a mapping, got {type(data).__name__}")
        return cls()
    hints = typing.get_type_hints(cls)
    known = {f.name for f in dataclasses.fields(cls)}
    for key in data:
        if key not in known:
            problems.append(f"{path + '.' if path else ''}{key}: unknown field")
    kwargs = {}
    for f in dataclasses.fields(cls):
        if f.name not in data:
            continue
        where = f"{path + '.' if path else ''}{f.name}"
        value = data[f.name]
        hint = hints[f.name]
        sub = _dataclass_of(hint)
        if sub is not None:
            kwargs[f.name] = from_dict(sub, value, where, problems)
        elif (cls, f.name) in _LIST_ITEM_TYPES:
            item = _LIST_ITEM_TYPES[(cls, f.name)]
            if not isinstance(value, list):
                problems.append(f"{where}: expected a list")
                continue
            kwargs[f.name] = [from_dict(item, v, f"{where}[{i}]", problems) for i, v in enumerate(value)]
        else:
            kwargs[f.name] = _coerce(value, hint, where, problems, (cls, f.name) in _TUPLE_FIELDS)
    obj = cls(**kwargs)
    if top and problems:
        raise ConfigError(problems)
    return obj


def _dataclass_of(hint):
    if dataclasses.is_dataclass(hint):
        return hint
    return None


def _coerce(value, hint, where, problems, as_tuple=False):
    origin = typing.get_origin(hint)
    args = typing.get_args(hint)
    if origin is typing.Union and type(None) in args:
        if value is None:
            return None
        hint = next(a for a in args if a is not type(None))
    if as_tuple:
        if not isinstance(value, (list, tuple)):
            problems.append(f"{where}: expected a list")
            return value
        return tuple(value)
    if hint is bool:
        if not isinstance(value, bool):
            problems.append(f"{where}: expected true/false, got {value!r}")
        return value
    if hint is int:
        if isinstance(value, bool) or not isinstance(value, int):
            problems.append(f"{where}: expected an integer, got {value!r}")
        return value
    if hint is float:
        if isinstance(value, str):
            # YAML 1.1 reads exponent forms without a dot (1e-4) as strings
            try:
                return float(value)
            except ValueError:
                pass
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            problems.append(f"{where}: expected a number, got {value!r}")
            return value
        return float(value)
    if hint is str:
        if not isinstance(value, str):
            problems.append(f"{where}: expected a string, got {value!r}")
        return value
    if hint is tuple and isinstance(value, list):
        return tuple(value)
    return value


def parse_override(text: str):
    """``a.b.c=value`` -> (["a", "b", "c"], parsed YAML value)."""
    if "=" not in text:
        raise ConfigError(f"override {text!r} must look like dotted.path=value")
    key, raw = text.split("=", 1)
    return key.strip().split("."), yaml.safe_load(raw)


def apply_overrides(data: dict, overrides) -> dict:
    data = dict(data)
    for text in overrides:
        keys, value = parse_override(text)
        node = data
        for k in keys[:-1]:
            node = node.setdefault(k, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {text!r}: {k} is not a section")
        node[keys[-1]] = value
    return data


def load_config(path=None, overrides=(), env=None) -> RunConfig:
    """Read a YAML run config, apply overrides and the seed env var, validate everything."""
    env = os.environ if env is None else env
    data = {}
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        try:
            data = yaml.safe_load(path.read_text()) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: invalid YAML: {exc}") from None
    data = apply_overrides(data, overrides)
    if env.get(SEED_ENV):
        try:
            data["seed"] = int(env[SEED_ENV])
        except ValueError:
            raise ConfigError(f"{SEED_ENV} must be an integer, got {env[SEED_ENV]!r}") from None
    problems = []
    cfg = from_dict(RunConfig, data, problems=problems)
    # the run seed drives every stochastic component unless a section pins its own
    section_seeds = data.get("train", {}) if isinstance(data.get("train"), dict) else {}
    if "seed" not in section_seeds or env.get(SEED_ENV):
        cfg.train.seed = cfg.seed
    aug = data.get("augmentation", {}) if isinstance(data.get("augmentation"), dict) else {}
    if "seed" not in aug or env.get(SEED_ENV):
        cfg.augmentation.seed = cfg.seed
    if not problems:
        # semantic checks assume well-typed fields
        problems = cfg.problems()
    else:
        try:
            problems += [p for p in cfg.problems() if p not in problems]
        except TypeError:
            pass
    if problems:
        raise ConfigError(problems)
    return cfg


def dump_config(cfg: RunConfig) -> str:
    return yaml.safe_dump(to_dict(cfg), sort_keys=False, default_flow_style=None)


def save_snapshot(cfg: RunConfig, run_dir) -> Path:
    path = Path(run_dir) / "config.snapshot"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dump_config(cfg))
    return path
