"""YAML configuration mapped onto the config dataclasses, with strict validation."""

from __future__ import annotations

import dataclasses
import types
import typing
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import simgen
from .catchsim import SweepConfig
from .core import CameraIntrinsics
from .pipeline import PipelineConfig

CONFIG_SCHEMA = 1


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ThrowConfig:
    speed: float = 8.0  # m/s
    start: tuple[float, float, float] = (3.2, 0.0, 1.1)  # world m
    target: tuple[float, float, float] = (0.0, 0.1, 0.5)  # world point the throw passes through
    launch_time: float = 0.1  # s
    ball_diameter: float = 0.1  # m


@dataclass(frozen=True)
class GenerateConfig:
    width: int = 640
    height: int = 480
    hfov_deg: float = 90.0
    camera_height: float = simgen.CAMERA_HEIGHT
    # [[duration_s, [wx, wy, wz]], ...] body rates, zero afterwards
    rotation_profile: tuple = ((0.15, (0.0, 0.0, 0.05)),)
    background: simgen.BackgroundConfig | None = field(default_factory=simgen.BackgroundConfig)
    noise: simgen.NoiseConfig = field(default_factory=simgen.NoiseConfig)
    throw: ThrowConfig | None = field(default_factory=ThrowConfig)
    duration: float | None = None  # s; None runs until just past the catch plane
    contrast_threshold: float = 0.25
    ball_contrast: float = 0.8
    sim_rate_hz: float = 10_000.0
    imu_rate_hz: float = 1000.0
    odom_rate_hz: float = 1000.0
    epoch_ns: int = 0


@dataclass(frozen=True)
class AppConfig:
    seed: int = 0
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)
    scene: GenerateConfig = field(default_factory=GenerateConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)

    def with_seed(self, seed: int) -> "AppConfig":
        return dataclasses.replace(
            self, seed=seed, pipeline=dataclasses.replace(self.pipeline, seed=seed),
            sweep=dataclasses.replace(self.sweep, seed=seed),
        )


# Seeds live only at the top level so one number drives every random draw.
_SEEDED = {PipelineConfig, SweepConfig}


def _origin(tp):
    return typing.get_origin(tp)


def _convert(tp, value, where: str):
    if tp is typing.Any:
        return value
    origin = _origin(tp)
    if origin in (typing.Union, types.UnionType):
        args = typing.get_args(tp)
        if value is None:
            if type(None) in args:
                return None
            raise ConfigError(f"{where}: null not allowed")
        inner = [a for a in args if a is not type(None)]
        return _convert(inner[0], value, where)
    if dataclasses.is_dataclass(tp):
        return build(tp, value, where)
    if tp is np.ndarray:
        arr = np.asarray(value, dtype=float)
        if arr.shape != (3,):
            raise ConfigError(f"{where}: expected a 3-vector")
        return arr
    if origin is tuple or tp is tuple:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{where}: expected a list, got {type(value).__name__}")
        args = typing.get_args(tp)
        if args and args[-1] is not Ellipsis:
            if len(args) != len(value):
                raise ConfigError(f"{where}: expected {len(args)} items, got {len(value)}")
            return tuple(_convert(a, v, f"{where}[{i}]") for i, (a, v) in enumerate(zip(args, value)))
        return _freeze(value)
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected true/false")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer")
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number")
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(f"{where}: expected a string")
        return value
    return value


def _freeze(v):
    if isinstance(v, (list, tuple)):
        return tuple(_freeze(x) for x in v)
    return v


def build(cls, data, where: str = "config"):
    """Instantiate dataclass ``cls`` from a mapping; unknown keys are errors."""
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected a mapping, got {type(data).__name__}")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls) if f.init}
    if cls in _SEEDED:
        names.discard("seed")
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {', '.join(map(str, unknown))}")
    kwargs = {k: _convert(hints[k], v, f"{where}.{k}") for k, v in data.items()}
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


def parse(data) -> AppConfig:
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError("config: top level must be a mapping")
    data = dict(data)
    schema = data.pop("schema", CONFIG_SCHEMA)
    if schema != CONFIG_SCHEMA:
        raise ConfigError(f"config: unsupported schema {schema!r}")
    cfg = build(AppConfig, data)
    return cfg.with_seed(cfg.seed)


def load(path) -> AppConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from None
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        loc = f":{mark.line + 1}:{mark.column + 1}" if mark is not None else ""
        raise ConfigError(f"{path}{loc}: {getattr(exc, 'problem', exc)}") from None
    try:
        return parse(data)
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def _plain(v):
    if dataclasses.is_dataclass(v):
        out = {}
        for f in dataclasses.fields(v):
            if f.name == "seed" and type(v) in _SEEDED:
                continue
            out[f.name] = _plain(getattr(v, f.name))
        return out
    if isinstance(v, np.ndarray):
        return [float(x) for x in v]
    if isinstance(v, (list, tuple)):
        return [_plain(x) for x in v]
    return v


def to_dict(cfg: AppConfig) -> dict:
    return {"schema": CONFIG_SCHEMA, **_plain(cfg)}


def dump(cfg: AppConfig) -> str:
    return yaml.safe_dump(to_dict(cfg), sort_keys=False)


# -- scene construction ---------------------------------------------------------


def scene_from(gen: GenerateConfig, seed: int) -> tuple[simgen.SceneConfig, simgen.ThrowSpec | None]:
    intr = CameraIntrinsics.from_fov(gen.width, gen.height, gen.hfov_deg)
    throw = None
    if gen.throw is not None:
        t = gen.throw
        throw = simgen.aim_throw(np.array(t.start), np.array(t.target), t.speed, t.launch_time,
                                 t.ball_diameter)
    duration = gen.duration
    if duration is None:
        if throw is None:
            duration = 1.0
        else:
            flight = simgen.plane_crossing(throw.p0_world, throw.v0_world, simgen.GRAVITY,
                                           np.array([-1.0, 0.0, 0.0]))
            duration = throw.launch_time + flight + 0.03
    scene = simgen.SceneConfig(
        intrinsics=intr,
        camera_to_body=simgen.default_extrinsics(gen.camera_height),
        rotation_profile=tuple((float(d), tuple(float(c) for c in w)) for d, w in gen.rotation_profile),
        background=gen.background,
        contrast_threshold=gen.contrast_threshold,
        ball_contrast=gen.ball_contrast,
        noise=gen.noise,
        duration=float(duration),
        seed=seed,
        sim_rate_hz=gen.sim_rate_hz,
        imu_rate_hz=gen.imu_rate_hz,
        odom_rate_hz=gen.odom_rate_hz,
        epoch_ns=gen.epoch_ns,
    )
    return scene, throw


__all__ = ["AppConfig", "ConfigError", "GenerateConfig", "ThrowConfig", "build", "dump", "load",
           "parse", "scene_from", "to_dict"]
