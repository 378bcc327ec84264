"""Run configuration: a versioned JSON document mapped onto dataclasses."""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, fields

from .netspec import ArchError, get_arch
from .padding import PaddingError, PaddingScheme

CONFIG_SCHEMA = "pppkit.config/1"
TASKS = ("classify", "bhv")
TASK_NORM = {"classify": (0.5, 0.25), "bhv": None}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class DatasetSpec:
    kind: str = "procedural"  # or "directory"
    path: str | None = None
    count: int = 480
    size: int = 2048
    seed: int = 0

    def validate(self) -> None:
        if self.kind not in ("procedural", "directory"):
            raise ConfigError(f"dataset.kind must be 'procedural' or 'directory', got {self.kind!r}")
        if self.kind == "directory" and not self.path:
            raise ConfigError("dataset.path is required for a directory dataset")
        if self.count < 1 or self.size < 1:
            raise ConfigError("dataset.count and dataset.size must be positive")


@dataclass(frozen=True)
class TrainSpec:
    epochs: int = 50
    batch_size: int = 32
    lr: float = 0.002
    momentum: float = 0.9
    weight_decay: float = 0.0
    train_size: int = 512

    def validate(self) -> None:
        if self.epochs < 0 or self.batch_size < 1 or self.train_size < 1:
            raise ConfigError("train.epochs must be >= 0, batch_size and train_size >= 1")
        if self.lr < 0 or not 0 <= self.momentum < 1 or self.weight_decay < 0:
            raise ConfigError("train.lr and weight_decay must be >= 0 and momentum in [0, 1)")


@dataclass(frozen=True)
class RunConfig:
    arch: str = "mini_vgg"
    scheme: str = "zeros"
    seed: int = 0
    task: str = "classify"
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    train: TrainSpec = field(default_factory=TrainSpec)
    output_dir: str = "runs"
    capture_layers: tuple | None = None
    nominal: tuple | None = None  # measurement input size; arch default when None
    grid: int = 2  # classify task: grid x grid position classes
    input_norm: tuple | None = None  # (mean, std) of network inputs; None means the task default
    measure_images: int | None = None  # None means the command's default
    snapshot_every: int = 10
    init: str = "he-uniform"
    bn_eps: float = 1e-5
    schema: str = CONFIG_SCHEMA

    def validate(self) -> "RunConfig":
        if self.schema != CONFIG_SCHEMA:
            raise ConfigError(f"unsupported config schema {self.schema!r}; expected {CONFIG_SCHEMA!r}")
        try:
            arch = get_arch(self.arch)
            PaddingScheme.parse(self.scheme)
        except (ArchError, PaddingError, ValueError) as exc:
            raise ConfigError(str(exc)) from None
        if self.task not in TASKS:
            raise ConfigError(f"task must be one of {TASKS}, got {self.task!r}")
        if self.capture_layers is not None:
            bad = [i for i in self.capture_layers if not 0 <= i <= arch.last_spatial]
            if bad or not self.capture_layers:
                raise ConfigError(f"capture_layers {list(self.capture_layers)} must be spatial layers of {self.arch}")
        if self.nominal is not None and (len(self.nominal) != 2 or min(self.nominal) < 1):
            raise ConfigError(f"nominal must be [h, w], got {self.nominal}")
        if self.grid < 1 or arch.input_size[1] // self.grid < 2:
            raise ConfigError(f"grid {self.grid} does not fit the {arch.input_size[1]}-pixel training images")
        if self.input_norm is not None and (len(self.input_norm) != 2 or not self.input_norm[1] > 0):
            raise ConfigError(f"input_norm must be [mean, std] with std > 0, got {self.input_norm}")
        if (self.measure_images is not None and self.measure_images < 1) or self.snapshot_every < 1:
            raise ConfigError("measure_images and snapshot_every must be positive")
        if self.init != "he-uniform" or self.bn_eps != 1e-5:
            raise ConfigError("only init 'he-uniform' and bn_eps 1e-5 are implemented")
        self.dataset.validate()
        self.train.validate()
        return self

    @property
    def padding(self) -> PaddingScheme:
        return PaddingScheme.parse(self.scheme)

    @property
    def norm(self) -> tuple[float, float] | None:
        """Input standardization; classify inputs are centred by default, bhv stays raw."""
        if self.input_norm is not None:
            return tuple(self.input_norm)
        return TASK_NORM[self.task]

    @property
    def num_classes(self) -> int:
        return self.grid * self.grid if self.task == "classify" else 2

    def arch_spec(self):
        return get_arch(self.arch).with_num_classes(self.num_classes)

    def to_dict(self) -> dict:
        d = asdict(self)
        for key in ("capture_layers", "nominal", "input_norm"):
            if d[key] is not None:
                d[key] = list(d[key])
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        d = dict(d)
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        try:
            if "dataset" in d:
                d["dataset"] = _sub(DatasetSpec, d["dataset"], "dataset")
            if "train" in d:
                d["train"] = _sub(TrainSpec, d["train"], "train")
            for key in ("capture_layers", "nominal"):
                if d.get(key) is not None:
                    d[key] = tuple(int(v) for v in d[key])
            if d.get("input_norm") is not None:
                d["input_norm"] = tuple(float(v) for v in d["input_norm"])
            cfg = cls(**d)
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"bad config value: {exc}") from None
        _check_types(cfg)
        return cfg.validate()

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        try:
            return cls.from_dict(json.loads(text))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from None

    @classmethod
    def load(cls, path: str | os.PathLike) -> "RunConfig":
        with open(path) as fh:
            return cls.from_json(fh.read())


def _sub(cls, d, name):
    if not isinstance(d, dict):
        raise ConfigError(f"{name} must be an object")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(d) - known)
    if unknown:
        raise ConfigError(f"unknown {name} keys: {unknown}")
    obj = cls(**d)
    _check_types(obj, name + ".")
    return obj


_TYPES = {
    int: (int,),
    float: (int, float),
    str: (str,),
}


def _check_types(obj, prefix: str = "") -> None:
    for f in fields(obj):
        v = getattr(obj, f.name)
        name = f.type.replace(" | None", "") if isinstance(f.type, str) else ""
        want = {"int": int, "float": float, "str": str}.get(name)
        if want is None or v is None:
            continue
        if isinstance(v, bool) or not isinstance(v, _TYPES[want]):
            raise ConfigError(f"{prefix}{f.name} must be {want.__name__}, got {type(v).__name__}")
