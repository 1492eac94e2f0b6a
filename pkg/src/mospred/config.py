"""Run configuration: one YAML file describes a whole experiment.

Unknown keys are hard errors so hyper-parameter typos cannot silently fall
back to defaults. Sections mirror the component config dataclasses.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .encoder import EncoderConfig
from .errors import ConfigError
from .knn import FusionConfig
from .losses import LossConfig
from .manifest import DatasetSpec
from .model import HeadConfig
from .trainer import TrainConfig


@dataclass
class RunConfig:
    name: str = "run"
    out_dir: str = "runs/run"
    datasets: list[DatasetSpec] = field(default_factory=list)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    head: HeadConfig = field(default_factory=HeadConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    fusion: FusionConfig = field(default_factory=FusionConfig)

    def validate(self) -> None:
        if not self.datasets:
            raise ConfigError("config must declare at least one dataset")
        for spec in self.datasets:
            spec.validate()
        names = [d.name for d in self.datasets]
        if len(set(names)) != len(names):
            raise ConfigError("dataset names must be unique")
        self.encoder.validate()
        self.head.validate()
        self.loss.validate()
        self.train.validate()
        self.fusion.validate()

    def score_range(self) -> tuple[float, float]:
        """Union of the dataset rating ranges."""
        lo = min(d.score_min for d in self.datasets)
        hi = max(d.score_max for d in self.datasets)
        return lo, hi

    def resolve_clip(self) -> None:
        """Fill the head clip range from the dataset score range when unset."""
        if self.head.clip_enabled and (self.head.clip_min is None or self.head.clip_max is None):
            lo, hi = self.score_range()
            self.head.clip_min, self.head.clip_max = lo, hi


_TUPLE_FIELDS = {"duration_range", "freq_range", "snr_db_range"}


def _coerce_dataclass(cls, data: Any, path: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a mapping, got {type(data).__name__}")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(data) - set(fields)
    if unknown:
        raise ConfigError(f"unknown config key: {path}.{sorted(unknown)[0]}")
    kwargs = {}
    for key, value in data.items():
        if key in _TUPLE_FIELDS and isinstance(value, list):
            value = tuple(value)
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def run_config_from_dict(data: dict, base_dir: Path | None = None) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError("config root must be a mapping")
    known = {"name", "out_dir", "datasets", "encoder", "head", "loss", "train", "fusion"}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown config key: {sorted(unknown)[0]}")
    datasets_raw = data.get("datasets", [])
    if not isinstance(datasets_raw, list):
        raise ConfigError("datasets: expected a list")
    datasets = [
        _coerce_dataclass(DatasetSpec, item, f"datasets[{i}]") for i, item in enumerate(datasets_raw)
    ]
    cfg = RunConfig(
        name=data.get("name", "run"),
        out_dir=data.get("out_dir", "runs/run"),
        datasets=datasets,
        encoder=_coerce_dataclass(EncoderConfig, data.get("encoder", {}), "encoder"),
        head=_coerce_dataclass(HeadConfig, data.get("head", {}), "head"),
        loss=_coerce_dataclass(LossConfig, data.get("loss", {}), "loss"),
        train=_coerce_dataclass(TrainConfig, data.get("train", {}), "train"),
        fusion=_coerce_dataclass(FusionConfig, data.get("fusion", {}), "fusion"),
    )
    if base_dir is not None:
        cfg.out_dir = str(_resolve(base_dir, cfg.out_dir))
        for spec in cfg.datasets:
            for attr in ("raw_dir", "train_manifest", "dev_manifest", "test_manifest"):
                value = getattr(spec, attr)
                if value:
                    setattr(spec, attr, str(_resolve(base_dir, value)))
        if cfg.encoder.feature_dir:
            cfg.encoder.feature_dir = str(_resolve(base_dir, cfg.encoder.feature_dir))
    cfg.validate()
    cfg.resolve_clip()
    return cfg


def _resolve(base_dir: Path, value: str) -> Path:
    p = Path(value)
    return p if p.is_absolute() else base_dir / p


def load_run_config(path: str | Path) -> RunConfig:
    """Parse a YAML run config; relative paths resolve against the file's dir."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        data = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML ({exc})") from exc
    if data is None:
        raise ConfigError(f"{path}: empty config")
    return run_config_from_dict(data, base_dir=path.parent)
