"""One JSON document configuring every pipeline stage.

Sections map one-to-one onto the stage config dataclasses; unknown keys
and type mismatches are reported with their full key path so a typo in a
deeply nested field is findable from the error alone.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, fields

from .rangeproj import GridConfig
from .samples import SampleConfig
from .scene import SceneConfig, SensorConfig
from .segmentation import SegThresholds
from .store import AnchorBudget
from .tracking import AssocConfig
from .training import TrainConfig


class ConfigError(ValueError):
    """Configuration problem, message prefixed with the offending key path."""


@dataclass
class PipelineOptions:
    ground_filter: bool = True   # drop near-ground points before projection
    ground_margin: float = 0.15  # [m] band around the ground plane to drop

    def validate(self) -> None:
        if self.ground_margin < 0:
            raise ValueError("pipeline.ground_margin must be >= 0")


@dataclass
class PathsConfig:
    """Stage artifact locations, resolved against the workdir."""

    frames: str = "frames.jsonl"
    truth: str = "truth.json"
    segments: str = "segments.jsonl"
    samples_bin: str = "samples.bin"
    samples_index: str = "samples_index.json"
    sample_truth: str = "sample_truth.jsonl"
    tracks: str = "tracks.jsonl"
    constraints: str = "constraints.jsonl"
    annotations: str = "annotations.jsonl"
    audit: str = "audit.jsonl"
    params: str = "classifier.params"
    loss_history: str = "loss.csv"
    report: str = "report.json"
    report_csv: str = "report.csv"


@dataclass
class PipelineConfig:
    workdir: str = "."
    frontend_dir: str | None = None  # static files served at / when set
    scene: SceneConfig = field(default_factory=SceneConfig)
    sensor: SensorConfig = field(default_factory=SensorConfig)
    grid: GridConfig = field(default_factory=GridConfig)
    segmentation: SegThresholds = field(default_factory=SegThresholds)
    sample: SampleConfig = field(default_factory=SampleConfig)
    assoc: AssocConfig = field(default_factory=AssocConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    anchor_budget: AnchorBudget = field(default_factory=AnchorBudget)
    pipeline: PipelineOptions = field(default_factory=PipelineOptions)
    paths: PathsConfig = field(default_factory=PathsConfig)

    def path(self, name: str) -> str:
        return os.path.join(self.workdir, getattr(self.paths, name))

    def ground_z(self) -> float:
        """Ground plane height in sensor coordinates (flat world)."""
        return -self.sensor.mount_height

    def validate(self) -> None:
        for section in ("scene", "sensor", "grid", "segmentation", "sample",
                        "assoc", "pipeline"):
            _validate_section(section, getattr(self, section))
        _validate_section("train", self.train)
        if self.anchor_budget.per_class < 0 or self.anchor_budget.unknown < 0:
            raise ConfigError("anchor_budget: limits must be >= 0")


_SECTIONS: dict[str, type] = {
    "scene": SceneConfig,
    "sensor": SensorConfig,
    "grid": GridConfig,
    "segmentation": SegThresholds,
    "sample": SampleConfig,
    "assoc": AssocConfig,
    "train": TrainConfig,
    "anchor_budget": AnchorBudget,
    "pipeline": PipelineOptions,
    "paths": PathsConfig,
}

_SCALARS = {int: "an integer", float: "a number", str: "a string",
            bool: "a boolean"}


def _validate_section(name: str, section) -> None:
    validate = getattr(section, "validate", None)
    if validate is None:
        return
    try:
        validate()
    except ValueError as exc:
        msg = str(exc)
        first_word = msg.split(" ", 1)[0]
        if "." not in first_word:  # sub-config messages may lack the section
            msg = f"{name}.{msg}"
        raise ConfigError(msg) from exc


def _coerce(path: str, value, want: type):
    """Check a JSON value against a dataclass field annotation."""
    if want is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number")
        return float(value)
    if want is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected an integer")
        return value
    if want is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected a boolean")
        return value
    if want is str:
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string")
        return value
    return value  # dicts and optionals pass through, validated downstream


_FIELD_TYPES = {
    "int": int, "float": float, "str": str, "bool": bool,
    "int | None": int, "float | None": float, "str | None": str,
}


def _build_section(name: str, cls: type, raw) -> object:
    if not isinstance(raw, dict):
        raise ConfigError(f"{name}: expected an object")
    spec = {f.name: f.type for f in fields(cls)}
    kwargs = {}
    for key, value in raw.items():
        if key not in spec:
            raise ConfigError(f"{name}.{key}: unknown key")
        want = _FIELD_TYPES.get(str(spec[key]))
        if value is None and "None" in str(spec[key]):
            kwargs[key] = None
        elif want is not None:
            kwargs[key] = _coerce(f"{name}.{key}", value, want)
        else:
            kwargs[key] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{name}: {exc}") from exc


def config_from_dict(raw: dict) -> PipelineConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a JSON object")
    kwargs = {}
    for key, value in raw.items():
        if key == "workdir":
            kwargs["workdir"] = _coerce("workdir", value, str)
        elif key == "frontend_dir":
            kwargs["frontend_dir"] = (None if value is None
                                      else _coerce("frontend_dir", value, str))
        elif key in _SECTIONS:
            kwargs[key] = _build_section(key, _SECTIONS[key], value)
        else:
            raise ConfigError(f"{key}: unknown key")
    cfg = PipelineConfig(**kwargs)
    cfg.validate()
    return cfg


def load_config(path: str) -> PipelineConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}")
    cfg = config_from_dict(raw)
    if "workdir" not in raw:
        cfg.workdir = os.path.dirname(os.path.abspath(path)) or "."
    return cfg
