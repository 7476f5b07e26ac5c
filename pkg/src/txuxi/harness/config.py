"""Experiment configuration files.

Plain UTF-8 ``key = value`` lines grouped under ``[section]`` headers.
Every key has a default; unknown sections or keys are errors.  Example::

    [experiment]
    variants = v1, v2, v3
    seed = 0

    [train]
    epochs = 120

    [explain]
    methods = gradient, gbp, gradcam
    rise_masks = 4000
"""

from __future__ import annotations

import configparser
import dataclasses
import zlib
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from ..attributions import MethodConfig, MethodId
from ..errors import ConfigurationError
from ..gen.dataset import LABEL_MODES
from ..gen.scene import VARIANTS
from ..micronet.training import TrainConfig

METRICS = ("emd", "min")


@dataclass(frozen=True)
class DataSettings:
    train_count: int = 500
    test_count: int = 100
    label_mode: str = "count-class"
    count_min: int = 1
    count_max: int = 4
    size_min: int = 4
    size_max: int = 10
    image_size: int = 64


@dataclass(frozen=True)
class TrainSettings:
    learning_rate: float = 0.01
    epochs: int = 300
    batch_size: int = 8
    momentum: float = 0.9
    weight_decay: float = 1e-4
    augment: bool = True
    schedule: str = "cosine"
    min_score: float = 0.95
    init_seed: int = 0

    def train_config(self, seed: int, loss: str = "cross-entropy") -> TrainConfig:
        return TrainConfig(self.learning_rate, self.epochs, self.batch_size, seed, loss, self.momentum,
                           self.weight_decay, self.augment, self.schedule)


@dataclass(frozen=True)
class ExperimentConfig:
    variants: tuple = VARIANTS
    seed: int = 0
    textures: str | None = None
    fallback_textures: bool = True
    data: DataSettings = field(default_factory=DataSettings)
    train: TrainSettings = field(default_factory=TrainSettings)
    methods: tuple = tuple(MethodId)
    method_config: MethodConfig = field(default_factory=MethodConfig)
    metrics: tuple = METRICS
    emd_grid: int = 16

    def validate(self) -> "ExperimentConfig":
        if not self.variants:
            raise ConfigurationError("at least one variant is required")
        for v in self.variants:
            if v not in VARIANTS:
                raise ConfigurationError(f"unknown variant {v!r}; expected one of {VARIANTS}")
        if self.data.train_count < 1 or self.data.test_count < 1:
            raise ConfigurationError("train_count and test_count must be >= 1")
        if self.data.label_mode not in LABEL_MODES:
            raise ConfigurationError(f"unknown label_mode {self.data.label_mode!r}")
        try:
            self.train.train_config(0)
        except ValueError as exc:
            raise ConfigurationError(f"[train]: {exc}") from None
        if not self.methods:
            raise ConfigurationError("at least one method is required")
        if not self.metrics:
            raise ConfigurationError("at least one metric is required")
        if self.data.image_size % self.emd_grid:
            raise ConfigurationError(f"emd_grid {self.emd_grid} does not divide image_size {self.data.image_size}")
        if self.textures is not None and not Path(self.textures).is_dir():
            raise ConfigurationError(f"texture directory {self.textures} does not exist")
        return self

    @property
    def loss(self) -> str:
        return "cross-entropy" if self.data.label_mode == "count-class" else "mse"

    def split_seed(self, variant: str, split: str) -> int:
        """Independent generation seed per (variant, split)."""
        keys = [self.seed, zlib.crc32(variant.encode()), zlib.crc32(split.encode())]
        return int(np.random.SeedSequence(keys).generate_state(1, np.uint32)[0])


def parse_methods(text) -> tuple:
    names = [t for t in (text.split(",") if isinstance(text, str) else text) if str(t).strip()]
    if len(names) == 1 and str(names[0]).strip().lower() == "all":
        return tuple(MethodId)
    return tuple(dict.fromkeys(MethodId.parse(str(n)) for n in names))


def parse_metrics(text) -> tuple:
    names = [t.strip().lower() for t in (text.split(",") if isinstance(text, str) else text) if t.strip()]
    for n in names:
        if n not in METRICS:
            raise ConfigurationError(f"unknown metric {n!r}; valid metrics: {', '.join(METRICS)}")
    return tuple(dict.fromkeys(names))


def _convert(key: str, raw: str, default):
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float) or default is None and key in _OPTIONAL_FLOATS:
            return float(raw)
        if isinstance(default, tuple):
            parts = raw.lower().replace("×", "x").split("x")
            return tuple(int(p) for p in parts) if len(parts) == 2 else (int(parts[0]),) * 2
        if default is None and key in _OPTIONAL_INTS:
            return int(raw)
    except ValueError:
        raise ConfigurationError(f"bad value for {key}: {raw!r}") from None
    return raw


_OPTIONAL_FLOATS = {"kernel_width"}
_OPTIONAL_INTS = {"cam_layer"}
_METHOD_KEYS = {f.name: f.default for f in fields(MethodConfig) if f.name != "baseline"}


def _apply(obj, section: str, items: dict):
    known = {f.name: getattr(obj, f.name) for f in fields(obj)}
    changes = {}
    for key, raw in items.items():
        if key not in known:
            raise ConfigurationError(f"unknown key {key!r} in [{section}]")
        changes[key] = _convert(key, raw, known[key])
    return dataclasses.replace(obj, **changes)


def load_config(path=None, text: str | None = None) -> ExperimentConfig:
    """Parse a config file (or string); missing keys keep their defaults."""
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        if text is not None:
            parser.read_string(text)
        elif path is not None:
            p = Path(path)
            if not p.is_file():
                raise ConfigurationError(f"config file {p} not found")
            parser.read_string(p.read_text(encoding="utf-8"), source=str(p))
    except configparser.Error as exc:
        raise ConfigurationError(f"malformed config: {exc}") from None
    cfg = ExperimentConfig()
    for section in parser.sections():
        items = dict(parser.items(section))
        if section == "experiment":
            changes = {}
            for key, raw in items.items():
                if key == "variants":
                    changes[key] = tuple(v.strip() for v in raw.split(",") if v.strip())
                elif key == "seed":
                    changes[key] = _convert(key, raw, 0)
                elif key == "textures":
                    changes[key] = raw.strip() or None
                elif key == "fallback_textures":
                    changes[key] = _convert(key, raw, True)
                else:
                    raise ConfigurationError(f"unknown key {key!r} in [experiment]")
            cfg = dataclasses.replace(cfg, **changes)
        elif section == "dataset":
            cfg = dataclasses.replace(cfg, data=_apply(cfg.data, section, items))
        elif section == "train":
            cfg = dataclasses.replace(cfg, train=_apply(cfg.train, section, items))
        elif section == "explain":
            methods = items.pop("methods", None)
            changes = {}
            for key, raw in items.items():
                if key not in _METHOD_KEYS:
                    raise ConfigurationError(f"unknown key {key!r} in [explain]")
                changes[key] = _convert(key, raw, _METHOD_KEYS[key])
            mc = dataclasses.replace(cfg.method_config, **changes)
            cfg = dataclasses.replace(cfg, method_config=mc)
            if methods is not None:
                cfg = dataclasses.replace(cfg, methods=parse_methods(methods))
        elif section == "evaluate":
            changes = {}
            for key, raw in items.items():
                if key == "metrics":
                    changes[key] = parse_metrics(raw)
                elif key == "emd_grid":
                    changes[key] = _convert(key, raw, 16)
                else:
                    raise ConfigurationError(f"unknown key {key!r} in [evaluate]")
            cfg = dataclasses.replace(cfg, **changes)
        else:
            raise ConfigurationError(f"unknown section [{section}]")
    return cfg.validate()
