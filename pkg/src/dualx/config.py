"""Run configuration: one JSON document merging model, training, degradation, tiling and data settings.

Grammar (all sections optional, unknown keys rejected)::

    {
      "seed": 0,
      "model": {"preset": "desk", <ModelConfig field>: value, ...},
      "train": {<TrainConfig field>: value, ...},
      "pretrain_iterations": 0,
      "degradation": {<DegradationConfig field>: value, ...},
      "tiling": {"tile_size": 112, "t_window": 16, "overlap": 16, "t_overlap": 4, "margin": 2},
      "data": {"clips": 1, "frames": 4, "height": 32, "width": 32, "max_motion": 2.0},
      "precision": "float32"
    }

Command-line overrides use dotted keys, e.g. ``train.lr=1e-3``; values are
parsed as JSON and fall back to plain strings.
"""
from __future__ import annotations

import copy
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Mapping, Sequence

from .degradation import DegradationConfig
from .errors import InvalidConfigError
from .io import config_hash
from .model import ModelConfig, preset
from .train import TrainConfig


@dataclass(frozen=True)
class TilingConfig:
    tile_size: int = 112
    t_window: int = 16
    overlap: int = 16
    t_overlap: int = 4
    margin: int = 2


@dataclass(frozen=True)
class DataConfig:
    """Synthetic training/evaluation clips (used when no clip directory is given)."""

    clips: int = 1
    frames: int = 4
    height: int = 32
    width: int = 32
    max_motion: float = 2.0


SECTIONS = ("seed", "model", "train", "pretrain_iterations", "degradation", "tiling", "data", "precision")


def _build(cls, section: str, values: Mapping):
    known = {f.name for f in fields(cls)}
    unknown = set(values) - known
    if unknown:
        raise InvalidConfigError(f"unknown {section} keys: {sorted(unknown)}")
    vals = {k: tuple(v) if isinstance(v, list) else v for k, v in values.items()}
    try:
        return cls(**vals)
    except TypeError as exc:
        raise InvalidConfigError(f"bad {section} section: {exc}") from exc


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    model_preset: str = "desk"
    model: ModelConfig = field(default_factory=lambda: preset("desk"))
    train: TrainConfig = field(default_factory=TrainConfig)
    pretrain_iterations: int = 0
    degradation: DegradationConfig = field(default_factory=DegradationConfig)
    tiling: TilingConfig = field(default_factory=TilingConfig)
    data: DataConfig = field(default_factory=DataConfig)
    precision: str = "float32"

    @classmethod
    def from_dict(cls, raw: Mapping) -> "RunConfig":
        unknown = set(raw) - set(SECTIONS)
        if unknown:
            raise InvalidConfigError(f"unknown config sections: {sorted(unknown)}")
        model_raw = dict(raw.get("model", {}))
        name = model_raw.pop("preset", "desk")
        model = ModelConfig.from_dict({**asdict(preset(name)), **model_raw})
        precision = raw.get("precision", "float32")
        if precision not in ("float32", "float64"):
            raise InvalidConfigError(f"precision must be float32 or float64, got {precision!r}")
        pre = int(raw.get("pretrain_iterations", 0))
        if pre < 0:
            raise InvalidConfigError("pretrain_iterations must be >= 0")
        return cls(
            seed=int(raw.get("seed", 0)),
            model_preset=name,
            model=model,
            train=TrainConfig.from_dict(raw.get("train", {})),
            pretrain_iterations=pre,
            degradation=_build(DegradationConfig, "degradation", raw.get("degradation", {})),
            tiling=_build(TilingConfig, "tiling", raw.get("tiling", {})),
            data=_build(DataConfig, "data", raw.get("data", {})),
            precision=precision,
        )

    def to_dict(self) -> dict:
        model = self.model.to_dict()
        return {
            "seed": self.seed,
            "model": {"preset": self.model_preset, **model},
            "train": self.train.to_dict(),
            "pretrain_iterations": self.pretrain_iterations,
            "degradation": {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self.degradation).items()},
            "tiling": asdict(self.tiling),
            "data": asdict(self.data),
            "precision": self.precision,
        }

    @property
    def hash(self) -> str:
        return config_hash(self.to_dict())


def parse_override(text: str) -> tuple[list[str], object]:
    if "=" not in text:
        raise InvalidConfigError(f"override {text!r} is not of the form key=value")
    key, value = text.split("=", 1)
    try:
        parsed = json.loads(value)
    except json.JSONDecodeError:
        parsed = value
    path = [k for k in key.strip().split(".") if k]
    if not path:
        raise InvalidConfigError(f"override {text!r} has an empty key")
    return path, parsed


def apply_overrides(raw: Mapping, overrides: Sequence[str]) -> dict:
    out = copy.deepcopy(dict(raw))
    for text in overrides:
        path, value = parse_override(text)
        node = out
        for k in path[:-1]:
            node = node.setdefault(k, {})
            if not isinstance(node, dict):
                raise InvalidConfigError(f"override {text!r} descends into a non-section")
        node[path[-1]] = value
    return out


def load_config(path: str | Path | None = None, overrides: Sequence[str] = (), seed: int | None = None) -> RunConfig:
    raw: dict = {}
    if path is not None:
        try:
            raw = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise InvalidConfigError(f"config file {path} not found") from None
        except json.JSONDecodeError as exc:
            raise InvalidConfigError(f"config file {path} is not valid JSON: {exc}") from None
        if not isinstance(raw, dict):
            raise InvalidConfigError("config root must be an object")
    raw = apply_overrides(raw, overrides)
    if seed is not None:
        raw["seed"] = seed
    return RunConfig.from_dict(raw)
