"""Pipeline configuration: one JSON file drives every stage.

Sections mirror the pipeline stages (env, search, labeling, policy, train,
eval, paths). Unknown keys are rejected with the offending key named, so a
typo cannot silently fall back to a default; missing keys take defaults.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .envs import EnvKind, Environment, make_env
from .labeling import LabelConfig
from .mcts import SearchConfig
from .policy import PolicyConfig
from .train import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class EnvSettings:
    kind: str = "grid"
    grid_size: int = 8
    wall_density: float = 0.12
    catalog_size: int = 10
    num_results: int = 3
    max_steps: int | None = None  # default: 64 for grid, 15 for shop

    def resolved_max_steps(self) -> int:
        if self.max_steps is not None:
            return self.max_steps
        return 64 if self.kind == EnvKind.GRID_WORLD.value else 15

    def build(self, kind: str | None = None) -> Environment:
        kind = kind or self.kind
        if kind == EnvKind.GRID_WORLD.value:
            return make_env(kind, size=self.grid_size, wall_density=self.wall_density,
                            max_steps=self.max_steps if self.max_steps is not None else 64)
        if kind == EnvKind.SHOP_SIM.value:
            return make_env(kind, catalog_size=self.catalog_size,
                            num_results=self.num_results,
                            max_steps=self.max_steps if self.max_steps is not None else 15)
        raise ConfigError(f"env.kind must be one of "
                          f"{[k.value for k in EnvKind]}, got {kind!r}")


@dataclass(frozen=True)
class EvalSettings:
    episodes: int = 100
    seed: int = 9000
    max_step_tokens: int = 24
    success_threshold: float | None = None
    dump_episodes: bool = False


@dataclass(frozen=True)
class PathSettings:
    data_dir: str = "data"
    checkpoint_dir: str = "checkpoints"
    report_dir: str = "reports"


@dataclass(frozen=True)
class PipelineConfig:
    env: EnvSettings = field(default_factory=EnvSettings)
    search: SearchConfig = field(default_factory=SearchConfig)
    labeling: LabelConfig = field(default_factory=LabelConfig)
    policy: PolicyConfig = field(default_factory=PolicyConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalSettings = field(default_factory=EvalSettings)
    paths: PathSettings = field(default_factory=PathSettings)


_SECTIONS = {"env": EnvSettings, "search": SearchConfig, "labeling": LabelConfig,
             "policy": PolicyConfig, "train": TrainConfig, "eval": EvalSettings,
             "paths": PathSettings}


def _build_section(name: str, cls, data: dict):
    known = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in data.items():
        if key not in known:
            raise ConfigError(f"unknown key {name}.{key}")
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {name} section: {exc}") from None


def config_from_dict(data: dict) -> PipelineConfig:
    if not isinstance(data, dict):
        raise ConfigError("config root must be an object")
    sections = {}
    for key, value in data.items():
        if key not in _SECTIONS:
            raise ConfigError(f"unknown key {key}")
        if not isinstance(value, dict):
            raise ConfigError(f"section {key} must be an object")
        sections[key] = _build_section(key, _SECTIONS[key], value)
    return PipelineConfig(**sections)


def load_config(path) -> PipelineConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return config_from_dict(data)
