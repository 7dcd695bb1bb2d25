"""Configuration for the simulator, the safety modules and the learning agent.

Everything is grouped into small dataclasses that mirror the sections of the
YAML configuration file::

    sim:        geometry, dynamics, action magnitudes, spawning
    traffic:    the rule-based traffic controller
    reward:     shaped reward targets and weights
    safety:     handcrafted shield parameters (gap rule and TTC ladder)
    agent:      DDQN hyperparameters and safety-module penalties
    lookahead:  recurrent predictor shape and training
    eval:       evaluation sweep defaults

Unknown sections or keys are rejected with the offending name so typos in a
config never silently fall back to defaults.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml


class ConfigError(ValueError):
    """Raised for unknown keys or values that break a parameter invariant."""


@dataclass(frozen=True)
class SimConfig:
    dt: float = 0.1
    v_max: float = 40.0
    lane_width: float = 3.7
    n_lanes: int = 3
    car_length: float = 5.0
    car_width: float = 2.0
    lane_change_time: float = 2.0
    snap_tol: float = 0.05
    episode_length: int = 200
    accel: float = 2.0
    brake: float = -4.0
    hard_brake: float = -8.0
    ego_initial_speed: float = 25.0
    sensing_range: float = 100.0
    traffic_min: int = 1
    traffic_max: int = 6
    spawn_gap_min: float = 20.0
    spawn_gap_max: float = 70.0
    spawn_retries: int = 50

    def validate(self) -> None:
        if self.dt <= 0:
            raise ConfigError("sim.dt must be positive")
        if not 0 <= self.traffic_min <= self.traffic_max <= 6:
            raise ConfigError("sim.traffic_min/traffic_max must satisfy 0 <= min <= max <= 6")
        if self.n_lanes < 1 or self.lane_width <= 0:
            raise ConfigError("sim.n_lanes and sim.lane_width must be positive")
        if not self.hard_brake <= self.brake < 0 < self.accel:
            raise ConfigError("sim action magnitudes must satisfy hard_brake <= brake < 0 < accel")

    @property
    def road_width(self) -> float:
        return self.n_lanes * self.lane_width

    @property
    def lane_change_steps(self) -> int:
        # ceil(T_lc / dt) without float noise pushing 20.000000001 up to 21
        return max(1, int(-(-round(self.lane_change_time / self.dt, 9) // 1)))


@dataclass(frozen=True)
class SafetyParams:
    """Gap-rule and TTC-ladder parameters.

    ``T_min`` and ``d_min`` feed the minimum-gap predicate; ``T_hb`` and
    ``T_b`` split the fallback ladder into hard-brake / brake / maintain.
    """

    T_min: float = 4.0
    d_min: float = 10.0
    T_hb: float = 7.0
    T_b: float = 10.0

    def validate(self, section: str = "safety") -> None:
        if self.T_min <= 0 or self.d_min <= 0:
            raise ConfigError(f"{section}.T_min and {section}.d_min must be positive")
        if not 0 < self.T_hb < self.T_b:
            raise ConfigError(f"{section} requires 0 < T_hb < T_b")


@dataclass(frozen=True)
class TrafficConfig:
    desired_speed_min: float = 22.0
    desired_speed_max: float = 32.0
    # lane-change proposals per second, per vehicle
    p_lc: float = 0.02
    T_min: float = 1.0
    d_min: float = 5.0
    T_hb: float = 1.5
    T_b: float = 3.0
    speed_tolerance: float = 0.1

    def validate(self) -> None:
        if not 0 < self.desired_speed_min <= self.desired_speed_max:
            raise ConfigError("traffic desired speed range is invalid")
        if self.p_lc < 0:
            raise ConfigError("traffic.p_lc must be non-negative")
        self.safety.validate("traffic")

    @property
    def safety(self) -> SafetyParams:
        return SafetyParams(T_min=self.T_min, d_min=self.d_min, T_hb=self.T_hb, T_b=self.T_b)


@dataclass(frozen=True)
class RewardParams:
    v_des: float = 30.0
    headway_time: float = 1.5
    d_min: float = 10.0
    # "current": centre of the lane the ego occupies; "fixed": centre of fixed_lane
    lane_policy: str = "current"
    fixed_lane: int = 1
    w_speed: float = 1.0
    w_lane: float = 1.0
    w_headway: float = 1.0

    def validate(self) -> None:
        if self.v_des <= 0 or self.headway_time <= 0 or self.d_min <= 0:
            raise ConfigError("reward.v_des, reward.headway_time and reward.d_min must be positive")
        if self.lane_policy not in ("current", "fixed"):
            raise ConfigError("reward.lane_policy must be 'current' or 'fixed'")


@dataclass(frozen=True)
class AgentConfig:
    gamma: float = 0.9
    lr: float = 1e-3
    episodes: int = 3500
    batch_size: int = 32
    buffer_capacity: int = 100_000
    target_sync: int = 1000
    eps_start: float = 1.0
    eps_end: float = 0.05
    eps_decay_fraction: float = 0.7
    # step rewards lie in (-3, 0], so returns lie in (-3 / (1 - gamma), 0];
    # penalties at or beyond that bound are never preferable to carrying on
    R_handcraft: float = 60.0
    R_dynamic: float = 30.0
    hidden: tuple[int, ...] = (100, 100)
    leaky_slope: float = 0.01
    eval_every: int = 100
    eval_episodes: int = 10
    # collision-terminated evaluation episodes are charged this per forfeited step
    eval_forfeit_reward: float = -3.0

    def validate(self) -> None:
        if not 0 < self.gamma < 1:
            raise ConfigError("agent.gamma must lie in (0, 1)")
        if self.batch_size <= 0 or self.batch_size % 2:
            raise ConfigError("agent.batch_size must be positive and even")
        if self.R_handcraft <= 0 or self.R_dynamic <= 0:
            raise ConfigError("agent.R_handcraft and agent.R_dynamic must be positive")


@dataclass(frozen=True)
class LookaheadConfig:
    history: int = 4
    horizon: int = 4
    hidden: int = 64
    epochs: int = 30
    batch_size: int = 64
    lr: float = 1e-3
    sentinel_tol: float = 0.1
    # veto actions with predicted violations (off by default: reward shaping only)
    shield: bool = False
    # neighbour slots the predicted-state gap check covers:
    # "lane" = front and rear in the ego lane, "all" = all six
    slots: str = "lane"

    def validate(self) -> None:
        if self.history < 1 or self.horizon < 1 or self.hidden < 1:
            raise ConfigError("lookahead.history, horizon and hidden must be >= 1")
        if self.slots not in ("lane", "all"):
            raise ConfigError("lookahead.slots must be 'lane' or 'all'")


@dataclass(frozen=True)
class EvalConfig:
    densities: tuple[int, ...] = (1, 2, 3, 4, 5, 6)
    episodes: int = 3000


@dataclass(frozen=True)
class Config:
    sim: SimConfig = field(default_factory=SimConfig)
    traffic: TrafficConfig = field(default_factory=TrafficConfig)
    reward: RewardParams = field(default_factory=RewardParams)
    safety: SafetyParams = field(default_factory=SafetyParams)
    agent: AgentConfig = field(default_factory=AgentConfig)
    lookahead: LookaheadConfig = field(default_factory=LookaheadConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def validate(self) -> "Config":
        self.sim.validate()
        self.traffic.validate()
        self.reward.validate()
        self.safety.validate()
        self.agent.validate()
        self.lookahead.validate()
        return self

    def to_dict(self) -> dict[str, Any]:
        out = {}
        for f in dataclasses.fields(self):
            section = dataclasses.asdict(getattr(self, f.name))
            out[f.name] = {k: list(v) if isinstance(v, tuple) else v for k, v in section.items()}
        return out

    def content_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def replace(self, **sections: dict[str, Any]) -> "Config":
        """Return a copy with some keys of some sections overridden."""
        data = self.to_dict()
        for name, values in sections.items():
            if name not in data:
                raise ConfigError(f"unknown config section: {name}")
            data[name].update(values)
        return config_from_dict(data)


def _build_section(cls, name: str, values: dict[str, Any] | None):
    if values is None:
        return cls()
    if not isinstance(values, dict):
        raise ConfigError(f"config section {name} must be a mapping")
    known = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in values.items():
        if key not in known:
            raise ConfigError(f"unknown config key: {name}.{key}")
        default = known[key].default
        if isinstance(default, tuple):
            value = tuple(value)
        elif isinstance(default, bool):
            value = bool(value)
        elif isinstance(default, float) and isinstance(value, int):
            value = float(value)
        kwargs[key] = value
    return cls(**kwargs)


def config_from_dict(data: dict[str, Any] | None) -> Config:
    data = data or {}
    sections = {f.name: f for f in dataclasses.fields(Config)}
    for name in data:
        if name not in sections:
            raise ConfigError(f"unknown config section: {name}")
    kwargs = {}
    for name, f in sections.items():
        cls = type(f.default_factory())
        kwargs[name] = _build_section(cls, name, data.get(name))
    return Config(**kwargs).validate()


def load_config(path: str | Path | None) -> Config:
    if path is None:
        return Config().validate()
    with open(path) as fh:
        data = yaml.safe_load(fh)
    return config_from_dict(data)


def dump_config(cfg: Config, path: str | Path) -> None:
    with open(path, "w") as fh:
        yaml.safe_dump(cfg.to_dict(), fh, sort_keys=True)
