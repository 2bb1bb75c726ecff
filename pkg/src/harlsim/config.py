"""Scenario configuration: a JSON tree with strict validation.

Every module default is overridable from one file; unknown keys are rejected
with the offending path, out-of-range values with the field name. The
canonical serialized form (sorted keys) round-trips exactly, which keeps
configs diff-able and runs reproducible.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from typing import Any, Dict, Optional, Tuple

from .agents import HarlParams, RewardConfig
from .baselines import CONTROLLER_NAMES
from .geometry import IntersectionSpec
from .idm import FORM_LITERAL, FORM_STANDARD, IdmParams
from .reservation import ReservationConfig
from .rl.sac import SacConfig
from .sim import WorldConfig


class ConfigError(ValueError):
    """A scenario config failed validation; message names the field."""


@dataclass
class TrainConfig:
    episodes: int = 100
    episode_seconds: float = 600.0
    checkpoint_every: int = 10
    reward_window: int = 10_000
    update_every: int = 30

    def validate(self) -> None:
        if self.episodes <= 0:
            raise ConfigError("train.episodes must be positive")
        if self.episode_seconds <= 0:
            raise ConfigError("train.episode_seconds must be positive")
        if self.checkpoint_every <= 0:
            raise ConfigError("train.checkpoint_every must be positive")
        if self.reward_window <= 0:
            raise ConfigError("train.reward_window must be positive")
        if self.update_every <= 0:
            raise ConfigError("train.update_every must be positive")


@dataclass
class ScenarioConfig:
    controller: str = "harl"
    flow_rate: float = 450.0
    hv_fraction: float = 0.8
    seed: int = 0
    duration: float = 3600.0
    sim_dt: float = 0.2
    idm_form: str = FORM_LITERAL
    intersection: IntersectionSpec = field(default_factory=IntersectionSpec)
    idm: IdmParams = field(default_factory=IdmParams)
    reservation: ReservationConfig = field(default_factory=ReservationConfig)
    harl: HarlParams = field(default_factory=HarlParams)
    sac: SacConfig = field(default_factory=SacConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    rear_guard: bool = True
    merge_lookahead: float = 30.0
    signal_cycle: float = 120.0
    signal_yellow: float = 3.0
    lqf_min_green: float = 5.0
    fcfs_margin: float = 2.0
    platoon_max: int = 8
    platoon_gap: float = 2.0

    def validate(self) -> None:
        if self.controller not in CONTROLLER_NAMES:
            raise ConfigError(
                "controller must be one of %s, got %r" % (", ".join(CONTROLLER_NAMES), self.controller)
            )
        if self.flow_rate <= 0:
            raise ConfigError("flow_rate must be positive (veh/lane/h)")
        if not (0.0 <= self.hv_fraction <= 1.0):
            raise ConfigError("hv_fraction must lie in [0, 1]")
        if self.duration <= 0:
            raise ConfigError("duration must be positive seconds")
        if self.sim_dt <= 0:
            raise ConfigError("sim_dt must be positive")
        if self.idm_form not in (FORM_LITERAL, FORM_STANDARD):
            raise ConfigError("idm_form must be literal or standard")
        if self.signal_cycle <= 4 * self.signal_yellow:
            raise ConfigError("signal_cycle must exceed the total yellow time")
        if self.lqf_min_green <= 0:
            raise ConfigError("lqf_min_green must be positive")
        if self.fcfs_margin < 0:
            raise ConfigError("fcfs_margin must be non-negative")
        if self.platoon_max < 1:
            raise ConfigError("platoon_max must be at least 1")
        if self.platoon_gap <= 0:
            raise ConfigError("platoon_gap must be positive")
        if self.harl.lower_steps < 1 or self.harl.upper_multiple < 1:
            raise ConfigError("harl cadences must be positive integers")
        self.intersection.validate()
        try:
            self.idm.validate()
        except ValueError as exc:
            raise ConfigError(str(exc))
        self.train.validate()
        if self.sac.batch_size <= 0 or self.sac.memory_capacity <= 0:
            raise ConfigError("sac.batch_size and sac.memory_capacity must be positive")
        if self.reservation.horizon_bins <= 0 or self.reservation.bin_duration <= 0:
            raise ConfigError("reservation horizon and bin duration must be positive")

    # ------------------------------------------------------------ construction

    def world_config(self) -> WorldConfig:
        idm = IdmParams(
            a_max=self.idm.a_max, b=self.idm.b, v0=self.idm.v0,
            s0=self.idm.s0, T=self.idm.T, form=self.idm_form,
        )
        return WorldConfig(
            flow_rate=self.flow_rate,
            hv_fraction=self.hv_fraction,
            seed=self.seed,
            sim_dt=self.sim_dt,
            idm=idm,
            rear_guard=self.rear_guard,
            merge_lookahead=self.merge_lookahead,
        )

    def desk_scale(self) -> "ScenarioConfig":
        """Reduced-size preset: small nets, short memory, light training."""
        cfg = parse_config(serialize_config(self))
        cfg.flow_rate = 200.0
        cfg.hv_fraction = 0.0
        cfg.sac = SacConfig(
            hidden=(64, 64),
            lr=self.sac.lr,
            gamma=self.sac.gamma,
            tau=self.sac.tau,
            batch_size=256,
            alpha_init=self.sac.alpha_init,
            auto_alpha=self.sac.auto_alpha,
            target_entropy=self.sac.target_entropy,
            warmup_decisions=300,
            memory_capacity=20_000,
        )
        cfg.train = TrainConfig(
            episodes=80,
            episode_seconds=500.0,
            checkpoint_every=20,
            reward_window=2_000,
            update_every=40,
        )
        return cfg


_SUBSECTIONS = {
    "intersection": IntersectionSpec,
    "idm": IdmParams,
    "reservation": ReservationConfig,
    "harl": HarlParams,
    "sac": SacConfig,
    "train": TrainConfig,
}


def _build(cls, data: Dict[str, Any], path: str):
    allowed = {f.name: f for f in fields(cls)}
    kwargs = {}
    for key, value in data.items():
        if key not in allowed:
            raise ConfigError("unknown key %r at %s" % (key, path or "top level"))
        ftype = allowed[key].type
        if key == "rewards":
            value = _build(RewardConfig, value, path + ".rewards")
        elif isinstance(value, list) and key in ("hidden",):
            value = tuple(value)
        kwargs[key] = value
    return cls(**kwargs)


def parse_config_dict(data: Dict[str, Any]) -> ScenarioConfig:
    if not isinstance(data, dict):
        raise ConfigError("config root must be an object")
    kwargs: Dict[str, Any] = {}
    for key, value in data.items():
        if key in _SUBSECTIONS:
            if not isinstance(value, dict):
                raise ConfigError("section %r must be an object" % key)
            kwargs[key] = _build(_SUBSECTIONS[key], value, key)
        else:
            valid = {f.name for f in fields(ScenarioConfig)}
            if key not in valid:
                raise ConfigError("unknown key %r at top level" % key)
            kwargs[key] = value
    cfg = ScenarioConfig(**kwargs)
    cfg.validate()
    return cfg


def parse_config(text: str) -> ScenarioConfig:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError("config is not valid JSON: %s" % exc)
    return parse_config_dict(data)


def load_config(path: str) -> ScenarioConfig:
    with open(path) as fh:
        return parse_config(fh.read())


def serialize_config(cfg: ScenarioConfig) -> str:
    """Canonical form: sorted keys, stable float formatting via json."""
    return json.dumps(asdict(cfg), sort_keys=True, indent=2) + "\n"
