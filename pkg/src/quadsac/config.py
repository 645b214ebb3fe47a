"""Experiment configuration: TOML with [quad], [env], [sac] and [train] sections."""

from __future__ import annotations

import re
from dataclasses import dataclass, field, fields
from pathlib import Path

import tomli
import tomli_w

from .dynamics import QuadParams
from .env import (
    ANGLE_SET_DEG,
    XY_SET,
    Z_SET,
    EpisodeConfig,
    GoToTargetEnv,
    InitDistribution,
    RewardWeights,
    TargetPath,
    prev_action_input_scale,
)
from .sac import SacConfig


class ConfigError(ValueError):
    """Config file problem, anchored to a line when one can be found."""


@dataclass(frozen=True)
class EnvSection:
    control_dt: float = 0.05
    max_steps_train: int = 250
    max_steps_eval: int = 500
    termination_radius: float = 6.5
    target_position: tuple = (0.0, 0.0, 1.7)
    target_attitude: tuple = (0.0, 0.0, 0.0)
    alive_bonus: float = 1.5
    pos_coeff: float = 1.0
    roll_rate_coeff: float = 0.05
    pitch_rate_coeff: float = 0.05
    yaw_rate_coeff: float = 0.1
    xy_set: tuple = XY_SET
    z_set: tuple = Z_SET
    angle_set_deg: tuple = ANGLE_SET_DEG
    path_speeds: tuple = (0.2, 1.5)
    square_side: float = 2.0
    square_center: tuple = (0.0, 0.0)
    sine_amplitude: float = 1.0
    sine_wavelength: float = 4.0

    def episode(self) -> EpisodeConfig:
        return EpisodeConfig(
            self.control_dt, self.max_steps_train, self.max_steps_eval, self.termination_radius,
            tuple(self.target_position), tuple(self.target_attitude),
        )

    def weights(self) -> RewardWeights:
        return RewardWeights(self.alive_bonus, self.pos_coeff, self.roll_rate_coeff, self.pitch_rate_coeff, self.yaw_rate_coeff)

    def init(self) -> InitDistribution:
        return InitDistribution(tuple(self.xy_set), tuple(self.z_set), tuple(self.angle_set_deg))

    def path(self, kind: str = "fixed", speed: float = 0.0) -> TargetPath:
        return TargetPath(
            kind, speed, tuple(self.target_position), self.square_side, tuple(self.square_center),
            self.sine_amplitude, self.sine_wavelength,
        )


@dataclass(frozen=True)
class TrainSection:
    total_env_steps: int = 1_000_000
    eval_interval: int = 10_000
    eval_episodes: int = 5
    checkpoint_interval: int = 100_000
    save_buffer: bool = False
    seed: int = 0
    output_dir: str = "runs/default"

    def __post_init__(self):
        if self.total_env_steps < 0:
            raise ValueError("total_env_steps must be >= 0")
        if self.eval_interval < 1 or self.checkpoint_interval < 1:
            raise ValueError("eval_interval and checkpoint_interval must be >= 1")
        if self.eval_episodes < 0:
            raise ValueError("eval_episodes must be >= 0")


@dataclass(frozen=True)
class ExperimentConfig:
    quad: QuadParams = field(default_factory=QuadParams)
    env: EnvSection = field(default_factory=EnvSection)
    sac: SacConfig = field(default_factory=SacConfig)
    train: TrainSection = field(default_factory=TrainSection)

    def make_env(self, max_steps: int | None = None, path: TargetPath | None = None, seed=None) -> GoToTargetEnv:
        episode = self.env.episode()
        return GoToTargetEnv(
            quad=self.quad, episode=episode, weights=self.env.weights(), init=self.env.init(),
            path=path, max_steps=max_steps, seed=seed,
        )

    def to_dict(self) -> dict:
        return {name: _section_dict(getattr(self, name)) for name in SECTIONS}

    def to_toml(self) -> str:
        return tomli_w.dumps(self.to_dict())

    def replace_train(self, **changes) -> "ExperimentConfig":
        data = _section_dict(self.train)
        data.update(changes)
        return ExperimentConfig(self.quad, self.env, self.sac, TrainSection(**data))

    @classmethod
    def from_dict(cls, data: dict, source: str | None = None) -> "ExperimentConfig":
        unknown = set(data) - set(SECTIONS)
        if unknown:
            name = sorted(unknown)[0]
            raise ConfigError(_anchor(source, rf"^\s*\[{re.escape(name)}\]", f"unknown section [{name}]"))
        built = {}
        for name, cls_ in SECTIONS.items():
            section = data.get(name, {})
            if not isinstance(section, dict):
                raise ConfigError(_anchor(source, rf"^\s*{re.escape(name)}\s*=", f"'{name}' must be a table"))
            known = {f.name for f in fields(cls_)}
            for key in section:
                if key not in known:
                    raise ConfigError(_anchor(source, rf"^\s*{re.escape(key)}\s*=", f"unknown key '{key}' in [{name}]", name))
            try:
                built[name] = cls_(**{k: _coerce(v) for k, v in section.items()})
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"invalid [{name}] section: {exc}") from None
        return cls(**built)


SECTIONS = {"quad": QuadParams, "env": EnvSection, "sac": SacConfig, "train": TrainSection}


def _section_dict(obj) -> dict:
    out = {}
    for f in fields(obj):
        value = getattr(obj, f.name)
        out[f.name] = list(value) if isinstance(value, tuple) else value
    return out


def _coerce(value):
    return tuple(value) if isinstance(value, list) else value


def _anchor(source: str | None, pattern: str, message: str, section: str | None = None) -> str:
    """Prefix ``message`` with the first matching line number, searching inside ``section``."""
    if source is None:
        return message
    current = None
    for lineno, line in enumerate(source.splitlines(), start=1):
        header = re.match(r"^\s*\[([^\]]+)\]", line)
        if header:
            current = header.group(1).strip()
        if re.search(pattern, line) and (section is None or current == section):
            return f"line {lineno}: {message}"
    return message


def load_config(path) -> ExperimentConfig:
    text = Path(path).read_text()
    return parse_config(text, str(path))


def parse_config(text: str, name: str = "<config>") -> ExperimentConfig:
    try:
        data = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"{name}: {exc}") from None
    try:
        return ExperimentConfig.from_dict(data, text)
    except ConfigError as exc:
        raise ConfigError(f"{name}: {exc}") from None


def reduced_task_config(**train_overrides) -> ExperimentConfig:
    """Desk-scale variant: drops within 0.5 m and 9.17 degrees of the target."""
    init = InitDistribution.limited(0.5, 9.17)
    env = EnvSection(xy_set=init.xy_set, z_set=init.z_set, angle_set_deg=init.angle_set_deg)
    sac = SacConfig(
        batch_size=256, learning_rate=1e-4, alpha=0.05, env_steps_per_epoch=2,
        input_scale=prev_action_input_scale(),
    )
    train = TrainSection(total_env_steps=200_000, eval_interval=10_000, checkpoint_interval=50_000, output_dir="runs/reduced")
    cfg = ExperimentConfig(env=env, sac=sac, train=train)
    return cfg.replace_train(**train_overrides) if train_overrides else cfg
