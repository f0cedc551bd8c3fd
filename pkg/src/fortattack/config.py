"""JSON run configuration: nested tables mapped onto the frozen config dataclasses.

Unknown keys and wrongly-typed values raise ConfigError naming the dotted
field path, e.g. ``env.rewards.hit_bonus``.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .env import EnvConfig
from .errors import ConfigError
from .policy import GraphConfig
from .ppo import PPOConfig

TEAM_MODES = ("learn", "random")


@dataclass(frozen=True)
class TrainSettings:
    iterations: int = 10
    seed: int = 0
    guard: str = "learn"  # "learn" or "random"
    attacker: str = "learn"
    init_guard: str | None = None  # checkpoint to start from instead of a fresh init
    init_attacker: str | None = None
    snapshot_every: int = 50
    snapshot_sigma: float = 2.0
    snapshot_window: int = 5
    workers: int = 1

    def validate(self) -> None:
        if self.iterations < 0:
            raise ConfigError("must be non-negative", "train.iterations")
        for name in ("guard", "attacker"):
            if getattr(self, name) not in TEAM_MODES:
                raise ConfigError(f"must be one of {', '.join(TEAM_MODES)}", f"train.{name}")
        if self.guard == "random" and self.attacker == "random":
            raise ConfigError("at least one team must learn", "train.guard")
        if self.snapshot_every < 0 or self.snapshot_window < 1 or not self.snapshot_sigma > 0:
            raise ConfigError("snapshot schedule needs every >= 0, window >= 1, sigma > 0", "train.snapshot_every")
        if self.workers < 1:
            raise ConfigError("must be >= 1", "train.workers")


@dataclass(frozen=True)
class RenderStyle:
    size: int = 480
    background: tuple[int, int, int] = (250, 250, 250)
    guard_color: tuple[int, int, int] = (30, 150, 40)
    attacker_color: tuple[int, int, int] = (200, 40, 40)
    dead_color: tuple[int, int, int] = (170, 170, 170)
    fort_color: tuple[int, int, int] = (40, 120, 200)
    laser_alpha: int = 90
    ring_color: tuple[int, int, int] = (235, 200, 0)
    focus_color: tuple[int, int, int] = (0, 70, 0)
    ring_min: float = 0.05  # arena units, weight 0
    ring_max: float = 0.16  # arena units, weight 1
    ring_width: int = 2

    def validate(self) -> None:
        if self.size < 16:
            raise ConfigError("must be >= 16", "style.size")
        if not 0 < self.ring_min <= self.ring_max:
            raise ConfigError("need 0 < ring_min <= ring_max", "style.ring_min")
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple) and (len(v) != 3 or any(not 0 <= c <= 255 for c in v)):
                raise ConfigError("colors are three integers in 0..255", f"style.{f.name}")


@dataclass(frozen=True)
class RunConfig:
    env: EnvConfig = field(default_factory=EnvConfig)
    graph: GraphConfig = field(default_factory=GraphConfig)
    ppo: PPOConfig = field(default_factory=PPOConfig)
    train: TrainSettings = field(default_factory=TrainSettings)
    style: RenderStyle = field(default_factory=RenderStyle)

    def validate(self) -> None:
        try:
            self.env.validate()
        except ConfigError as exc:
            raise ConfigError(exc.message, f"env.{exc.field}") from exc
        self.graph.validate()
        self.ppo.validate()
        self.train.validate()
        self.style.validate()

    def to_dict(self) -> dict:
        return to_dict(self)


def to_dict(obj) -> Any:
    if dataclasses.is_dataclass(obj):
        return {f.name: to_dict(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, (tuple, list)):
        return [to_dict(v) for v in obj]
    return obj


def _coerce(value, default, name: str):
    if dataclasses.is_dataclass(default):
        return from_dict(default, value, name)
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError("expected true or false", name)
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError("expected an integer", name)
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError("expected a number", name)
        return float(value)
    if isinstance(default, tuple):
        if not isinstance(value, (list, tuple)):
            raise ConfigError("expected a list", name)
        if default and len(value) != len(default) and not name.split(".")[-1].startswith("hidden"):
            raise ConfigError(f"expected {len(default)} entries", name)
        proto = default[0] if default else 0
        return tuple(_coerce(v, proto, f"{name}[{i}]") for i, v in enumerate(value))
    if default is None or isinstance(default, str):
        if value is not None and not isinstance(value, str):
            raise ConfigError("expected a string", name)
        return value
    return value


def from_dict(template, data, prefix: str):
    """``template`` with the fields present in ``data`` replaced, type-checked."""
    if not isinstance(data, dict):
        raise ConfigError("expected a table", prefix)
    names = {f.name for f in dataclasses.fields(template)}
    changes = {}
    for key, value in data.items():
        name = f"{prefix}.{key}" if prefix else key
        if key not in names:
            raise ConfigError("unknown field", name)
        changes[key] = _coerce(value, getattr(template, key), name)
    return dataclasses.replace(template, **changes)


def env_from_dict(data) -> EnvConfig:
    return from_dict(EnvConfig(), data, "env")


def load_config(path) -> RunConfig:
    """Read and validate a JSON run config; missing tables and fields keep their defaults."""
    text = Path(path).read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"not valid JSON (line {exc.lineno}: {exc.msg})", "config") from exc
    cfg = from_dict(RunConfig(), data, "")
    cfg.validate()
    return cfg
