"""Run configuration: one dataclass per INI section, with strict key checking.

An empty file yields the default training setup.  Every key lives under a
section; unknown sections or keys are rejected with their ``section.key`` path.
"""
from __future__ import annotations

import configparser
import dataclasses
import io
from dataclasses import dataclass, field
from pathlib import Path

from . import latent as L
from .errors import ConfigError, CrdNavError
from .policy import AgentConfig, SACConfig
from .vision import AUGMENTATIONS, InterventionConfig
from .world.render import SensorConfig
from .world.scenario import DOMAINS
from .world.sim import EpisodeConfig, RewardConfig


@dataclass
class TrainConfig:
    max_episodes: int = 300
    updates_per_episode: int = 400
    num_uavs: int = 8
    scenario: str = "playground"
    init_pattern: str = "random"
    seed: int = 0
    ablation_mask: tuple = L.DEFAULT_MASK
    checkpoint_interval: int = 0          # episodes; 0 disables periodic checkpoints
    eval_interval: int = 0                # episodes; 0 disables periodic evaluation
    eval_episodes: int = 5
    warmup: int = 1000                    # transitions collected with random actions before updates
    buffer_capacity: int = 20000
    obstacle_density: float | None = None  # None keeps the domain default
    save_buffer: bool = True              # include replay contents in checkpoints

    def validate(self) -> None:
        L.check_mask(self.ablation_mask)
        for name in ("max_episodes", "updates_per_episode", "num_uavs", "eval_episodes",
                     "buffer_capacity"):
            if getattr(self, name) < 1:
                raise ConfigError(f"train.{name} must be >= 1")
        for name in ("checkpoint_interval", "eval_interval", "warmup"):
            if getattr(self, name) < 0:
                raise ConfigError(f"train.{name} must be >= 0")
        if self.scenario not in DOMAINS:
            raise ConfigError(f"train.scenario must be one of {DOMAINS}, got {self.scenario!r}")
        if self.init_pattern not in ("random", "circle"):
            raise ConfigError(f"train.init_pattern must be random or circle, got {self.init_pattern!r}")


@dataclass
class EpisodeSection:
    max_steps: int = 400
    dt: float = 0.1
    uav_radius: float = 0.3
    box_half_xy: float = 8.0
    box_z: tuple = (2.0, 6.0)
    circle_radius: float = 12.0
    circle_height: float = 4.0
    min_separation: float = 1.0
    min_goal_distance: float = 2.0
    placement_clearance: float = 1.0
    d_min_source: str = "ground_truth"


@dataclass
class InterventionSection:
    active: bool = True
    lambda_low: float = 0.5
    lambda_high: float = 1.5
    noise_sigma: float = 0.4
    blur_kernel_length: int = 5
    contrast_low: float = 0.7
    contrast_high: float = 1.3
    enabled: tuple = AUGMENTATIONS


@dataclass
class LatentSection:
    n1: int = 16
    n2: int = 16
    n3: int = 32
    channels: tuple = (16, 32, 32, 32)
    feature_dim: int = 128
    w_vae: float = 1.0
    w_rec: float = 0.1
    w_align: float = 1.0
    align_on: str = "z"


@dataclass
class RunSection:
    out_dir: str = "runs/default"


SECTIONS = {
    "train": TrainConfig,
    "episode": EpisodeSection,
    "sensor": SensorConfig,
    "reward": RewardConfig,
    "sac": SACConfig,
    "intervention": InterventionSection,
    "latent": LatentSection,
    "run": RunSection,
}


@dataclass
class RunConfig:
    train: TrainConfig = field(default_factory=TrainConfig)
    episode: EpisodeSection = field(default_factory=EpisodeSection)
    sensor: SensorConfig = field(default_factory=SensorConfig)
    reward: RewardConfig = field(default_factory=RewardConfig)
    sac: SACConfig = field(default_factory=SACConfig)
    intervention: InterventionSection = field(default_factory=InterventionSection)
    latent: LatentSection = field(default_factory=LatentSection)
    run: RunSection = field(default_factory=RunSection)

    # -- derived configs -------------------------------------------------------
    def validate(self) -> "RunConfig":
        try:
            self.train.validate()
            if self.sensor.height != self.sensor.width:
                raise ConfigError("sensor.height and sensor.width must match")
            self.episode_config()
            self.agent_config()
        except ConfigError:
            raise
        except CrdNavError as exc:
            raise ConfigError(str(exc)) from None
        return self

    def episode_config(self) -> EpisodeConfig:
        return EpisodeConfig(num_uavs=self.train.num_uavs, init_pattern=self.train.init_pattern,
                             sensor=self.sensor, **dataclasses.asdict(self.episode))

    def layout(self) -> L.LatentLayout:
        return L.LatentLayout(self.latent.n1, self.latent.n2, self.latent.n3)

    def agent_config(self) -> AgentConfig:
        lat = self.latent
        iv = {k: v for k, v in dataclasses.asdict(self.intervention).items() if k != "active"}
        return AgentConfig(
            layout=self.layout(),
            net=L.NetConfig(self.sensor.height, tuple(lat.channels), lat.feature_dim),
            sac=self.sac,
            weights=L.LossWeights(lat.w_vae, lat.w_rec, lat.w_align, lat.align_on),
            intervention=InterventionConfig(**iv),
            interventions=self.intervention.active,
            mask=tuple(self.train.ablation_mask),
            max_range=self.sensor.max_range,
        )

    # -- serialization ------------------------------------------------------------------
    def to_dict(self) -> dict:
        return {name: _jsonable(dataclasses.asdict(getattr(self, name))) for name in SECTIONS}

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        unknown = set(d) - set(SECTIONS)
        if unknown:
            raise ConfigError(f"unknown config section(s): {sorted(unknown)}")
        kwargs = {}
        for name, typ in SECTIONS.items():
            values = d.get(name, {})
            _check_keys(name, typ, values)
            defaults = typ()
            conv = {k: _coerce_value(getattr(defaults, k), v, f"{name}.{k}") for k, v in values.items()}
            kwargs[name] = _build(name, typ, conv)
        return cls(**kwargs).validate()

    def to_ini(self) -> str:
        cp = configparser.ConfigParser()
        for name, values in self.to_dict().items():
            cp[name] = {k: _format_value(v) for k, v in values.items()}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()


def _build(section: str, typ, values: dict):
    try:
        return typ(**values)
    except CrdNavError as exc:
        raise ConfigError(f"[{section}] {exc}") from None


def _check_keys(section: str, typ, values: dict) -> None:
    names = {f.name for f in dataclasses.fields(typ)}
    for k in values:
        if k not in names:
            raise ConfigError(f"unknown config key {section}.{k}")


def _jsonable(d: dict) -> dict:
    return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}


def _format_value(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, (list, tuple)):
        return ", ".join(str(x) for x in v)
    return str(v)


def _parse_scalar(default, text: str, path: str):
    t = text.strip()
    try:
        if isinstance(default, bool):
            low = t.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(t)
        if isinstance(default, int):
            return int(t)
        if isinstance(default, float) or default is None:
            if default is None and t.lower() in ("", "none"):
                return None
            return float(t)
    except ValueError:
        raise ConfigError(f"{path}: cannot parse {text!r} as {type(default).__name__}") from None
    return t


def _coerce_value(default, value, path: str):
    """Convert a raw INI string (or already-typed JSON value) to the default's type."""
    if isinstance(default, tuple):
        items = value if isinstance(value, (list, tuple)) else [s for s in str(value).split(",") if s.strip()]
        proto = default[0] if default else ""
        return tuple(_coerce_value(proto, x, path) for x in items)
    if isinstance(value, str):
        return _parse_scalar(default, value, path)
    if isinstance(default, bool) and not isinstance(value, bool):
        raise ConfigError(f"{path}: expected a boolean, got {value!r}")
    if isinstance(default, float) and isinstance(value, (int, float)):
        return float(value)
    if isinstance(default, int) and not isinstance(default, bool) and isinstance(value, float):
        if value != int(value):
            raise ConfigError(f"{path}: expected an integer, got {value!r}")
        return int(value)
    return value


def parse_ini(text: str) -> RunConfig:
    cp = configparser.ConfigParser(default_section="__none__")
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"config syntax error: {exc}") from None
    return RunConfig.from_dict({s: dict(cp[s]) for s in cp.sections()})


def load_config(path) -> RunConfig:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    return parse_ini(p.read_text(encoding="utf-8"))


def apply_overrides(cfg: RunConfig, overrides: dict) -> RunConfig:
    """Apply ``{"section.key": "value"}`` overrides; returns a new validated config."""
    d = cfg.to_dict()
    for path, value in overrides.items():
        section, _, key = path.partition(".")
        if section not in SECTIONS or not key:
            raise ConfigError(f"override {path!r} must look like section.key")
        d[section][key] = value
    return RunConfig.from_dict(d)
