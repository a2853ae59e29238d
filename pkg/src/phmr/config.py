"""Experiment configuration: one versioned YAML document plus dotted overrides."""
from __future__ import annotations

import dataclasses
import hashlib
import json
import re
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import yaml

from .encoders import EncoderConfig
from .synth import GeneratorConfig

CONFIG_SCHEMA = "phmr-config-1"


class ConfigError(ValueError):
    pass


class _Loader(yaml.SafeLoader):
    """Safe loader that also reads ``1e-3`` (no dot) as a float."""


_Loader.add_implicit_resolver(
    "tag:yaml.org,2002:float",
    re.compile(r"^[-+]?(?:[0-9][0-9_]*)(?:\.[0-9_]*)?[eE][-+]?[0-9]+$"),
    list("-+0123456789"),
)


def _yaml_load(text: str):
    return yaml.load(text, Loader=_Loader)


@dataclass
class SplitConfig:
    ratios: Tuple[int, int, int] = (3, 1, 1)
    seed: int = 0
    phmrd_count: Optional[int] = None


@dataclass
class ModelConfig:
    dim: int = 128
    heads: int = 4
    dropout: float = 0.1
    owner_embedding: bool = True
    segment_embedding: bool = True
    init_std: float = 0.1


@dataclass
class TrainConfig:
    epochs: int = 20
    patience: int = 5
    lr_fusion_linear: float = 1e-3
    lr_rest: float = 7e-5
    warmup_fraction: float = 0.1
    batch_size: int = 32
    seeds: List[int] = field(default_factory=lambda: [1, 2, 3, 4])
    modalities: str = "D+V+B"
    personality: str = "gold"
    fusion_prefixes: List[str] = field(default_factory=lambda: ["out.", "heads.", "embedder.video_proj."])
    vocab_max_size: int = 2000
    vocab_min_freq: int = 1
    predictor_modalities: str = "D+V"
    profile_pooling: str = "character"
    tau: float = 0.5
    bootstrap_resamples: int = 10000

    def validate(self) -> None:
        if self.epochs < 1 or self.batch_size < 1 or self.patience < 0:
            raise ConfigError("epochs and batch_size must be positive, patience non-negative")
        if self.lr_fusion_linear <= 0 or self.lr_rest <= 0:
            raise ConfigError("learning rates must be positive")
        if not 0 <= self.warmup_fraction <= 1:
            raise ConfigError("warmup_fraction must lie in [0, 1]")
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        if self.personality not in ("gold", "predicted", "none"):
            raise ConfigError(f"unknown personality source {self.personality!r}")
        pred = {x.strip().upper() for x in self.predictor_modalities.split("+") if x.strip()}
        if not pred or not pred <= {"D", "V"}:
            raise ConfigError(f"predictor_modalities must be drawn from D, V: {self.predictor_modalities!r}")
        if self.profile_pooling not in ("clip", "character"):
            raise ConfigError(f"unknown profile pooling {self.profile_pooling!r}")


@dataclass
class ExperimentConfig:
    schema: str = CONFIG_SCHEMA
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    split: SplitConfig = field(default_factory=SplitConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    def validate(self) -> None:
        if self.schema != CONFIG_SCHEMA:
            raise ConfigError(f"unsupported config schema {self.schema!r}")
        try:
            self.generator.validate()
        except ValueError as e:
            raise ConfigError(str(e)) from e
        self.train.validate()
        if self.model.dim % self.model.heads:
            raise ConfigError("model.dim must be divisible by model.heads")

    def to_json(self) -> dict:
        d = asdict(self)
        d["generator"] = self.generator.to_json()
        d["split"]["ratios"] = list(self.split.ratios)
        return d

    def hash(self) -> str:
        return hashlib.sha256(json.dumps(self.to_json(), sort_keys=True).encode()).hexdigest()[:12]

    def save(self, path) -> None:
        Path(path).write_text(yaml.safe_dump(self.to_json(), sort_keys=False), encoding="utf-8")


def _build(cls, data: Dict[str, Any], where: str):
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {sorted(unknown)}")
    return data


def config_from_dict(d: Dict[str, Any]) -> ExperimentConfig:
    d = dict(d or {})
    _build(ExperimentConfig, d, "config")
    try:
        cfg = ExperimentConfig(
            schema=d.get("schema", CONFIG_SCHEMA),
            generator=GeneratorConfig.from_json(_build(GeneratorConfig, d.get("generator", {}), "generator")),
            split=SplitConfig(**{k: tuple(v) if k == "ratios" else v
                                 for k, v in _build(SplitConfig, d.get("split", {}), "split").items()}),
            encoder=EncoderConfig(**_build(EncoderConfig, d.get("encoder", {}), "encoder")),
            model=ModelConfig(**_build(ModelConfig, d.get("model", {}), "model")),
            train=TrainConfig(**_build(TrainConfig, d.get("train", {}), "train")),
        )
    except TypeError as e:
        raise ConfigError(str(e)) from e
    except ValueError as e:
        if isinstance(e, ConfigError):
            raise
        raise ConfigError(str(e)) from e
    cfg.validate()
    return cfg


def apply_overrides(d: Dict[str, Any], overrides: Sequence[str]) -> Dict[str, Any]:
    """``section.key=value`` overrides; values are parsed as YAML scalars/lists."""
    d = json.loads(json.dumps(d))
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, raw = item.split("=", 1)
        parts = key.strip().split(".")
        node = d
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {key!r} descends into a scalar")
        node[parts[-1]] = _yaml_load(raw)
    return d


def load_config(path: Optional[str] = None, overrides: Sequence[str] = ()) -> ExperimentConfig:
    base: Dict[str, Any] = {}
    if path:
        try:
            base = _yaml_load(Path(path).read_text(encoding="utf-8")) or {}
        except (OSError, yaml.YAMLError) as e:
            raise ConfigError(f"cannot read config {path}: {e}") from e
        if not isinstance(base, dict):
            raise ConfigError("config root must be a mapping")
    if overrides:
        base = apply_overrides(base, overrides)
    return config_from_dict(base)
