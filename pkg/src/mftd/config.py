"""Run configuration: JSON text with a required version field, unknown keys rejected."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .geometry import LBracketGeometry, MaterialModel
from .hifi import HiFiConfig
from .lowfi import ContinuationSchedule, LowFiConfig
from .vae import TrainConfig

CONFIG_VERSION = 1


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SweepConfig:
    """Low-fidelity seeding: volume bounds, seed count and optimizer settings."""

    volume_fractions: tuple = (0.20, 0.25, 0.30, 0.35, 0.40, 0.45, 0.50)
    n_seeds: int | None = 20  # None: one run per fraction
    max_iter: int = 200
    move: float = 0.05
    continuation: tuple = (8.0, 16.0, 32.0)
    interval: int = 30
    filter_radius: float = 0.05

    def __post_init__(self):
        if not self.volume_fractions:
            raise ConfigError("volume_fractions is empty")
        if self.n_seeds is not None and self.n_seeds < 1:
            raise ConfigError("n_seeds must be positive")

    def lowfi(self, material: MaterialModel, force: float) -> LowFiConfig:
        return LowFiConfig(
            volume_fraction=self.volume_fractions[0], max_iter=self.max_iter, move=self.move,
            schedule=ContinuationSchedule(tuple(float(v) for v in self.continuation), self.interval),
            material=material, filter_radius=self.filter_radius, force=force,
        )


@dataclass(frozen=True)
class HiFiSettings:
    """Body-fitted evaluation knobs; modulus, Poisson ratio and load come from the run."""

    threshold: float = 0.5
    smoothing_iterations: int = 5
    damping: float = 0.5
    target_edge_length: float | None = None
    min_angle: float = 25.0

    def __post_init__(self):
        HiFiConfig(self.threshold, self.smoothing_iterations, self.damping, self.target_edge_length,
                   self.min_angle)


@dataclass(frozen=True)
class EvolveConfig:
    population: int = 20
    offspring: int = 20
    max_iterations: int = 50
    checkpoint_every: int = 10

    def __post_init__(self):
        if self.population < 1 or self.offspring < 1:
            raise ConfigError("population and offspring must be positive")
        if self.max_iterations < 0:
            raise ConfigError("max_iterations must be >= 0")
        if self.checkpoint_every < 1:
            raise ConfigError("checkpoint_every must be positive")


@dataclass(frozen=True)
class RunConfig:
    geometry: LBracketGeometry = field(default_factory=LBracketGeometry)
    element_size: float = 0.04
    force: float = 1.0
    material: MaterialModel = field(default_factory=MaterialModel)
    sweep: SweepConfig = field(default_factory=SweepConfig)
    hifi: HiFiSettings = field(default_factory=HiFiSettings)
    evolve: EvolveConfig = field(default_factory=EvolveConfig)
    vae: TrainConfig = field(default_factory=TrainConfig)
    seed: int = 0
    threads: int = 1
    output: str = "run"

    def __post_init__(self):
        if self.element_size <= 0:
            raise ConfigError("element_size must be positive")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")

    def hifi_config(self) -> HiFiConfig:
        """High-fidelity settings sharing the solid modulus, Poisson ratio and load."""
        h = self.hifi
        return HiFiConfig(
            threshold=h.threshold, smoothing_iterations=h.smoothing_iterations, damping=h.damping,
            target_edge_length=h.target_edge_length, min_angle=h.min_angle,
            E0=self.material.E0, nu=self.material.nu, force=self.force,
        )

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        out = {"version": CONFIG_VERSION}
        out.update(_plain(self))
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        data = dict(data)
        if "version" not in data:
            raise ConfigError("config is missing the required 'version' field")
        if data.pop("version") != CONFIG_VERSION:
            raise ConfigError(f"unsupported config version (expected {CONFIG_VERSION})")
        return _build(cls, data, "config")

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        return cls.from_dict(data)

    @classmethod
    def load(cls, path) -> "RunConfig":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))


def _plain(obj):
    if dataclasses.is_dataclass(obj):
        return {f.name: _plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, tuple):
        return [_plain(v) for v in obj]
    return obj


def _build(cls, data, where):
    if not isinstance(data, dict):
        raise ConfigError(f"{where} must be an object")
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(unknown)}")
    defaults = cls()
    kwargs = {}
    for name, value in data.items():
        current = getattr(defaults, name)
        if dataclasses.is_dataclass(current):
            value = _build(type(current), value, f"{where}.{name}")
        elif isinstance(current, tuple):
            if not isinstance(value, list):
                raise ConfigError(f"{where}.{name} must be a list")
            value = tuple(value)
        elif isinstance(current, bool):
            if not isinstance(value, bool):
                raise ConfigError(f"{where}.{name} must be true or false")
        elif isinstance(current, (int, float)) and not isinstance(current, bool):
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                if not (value is None and name in ("n_seeds", "target_edge_length")):
                    raise ConfigError(f"{where}.{name} must be a number")
            elif isinstance(current, int) and not isinstance(value, int):
                raise ConfigError(f"{where}.{name} must be an integer")
        elif current is None and value is not None and not isinstance(value, (int, float)):
            raise ConfigError(f"{where}.{name} must be a number or null")
        kwargs[name] = value
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc
