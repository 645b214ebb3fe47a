"""Go-to-target MDP around the rigid-body simulator."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields

import numpy as np

from .dynamics import (
    PWM_LIMIT,
    QuadParams,
    RigidState,
    clamp_pwm,
    euler_from_rotation,
    rotation_from_euler,
    step_physics,
)

OBS_DIM = 25
ACT_DIM = 4

XY_SET = (-1.5, -1.0, -0.5, 0.0, 0.5, 1.0, 1.5)
Z_SET = (1.2, 1.3, 1.4, 1.5, 1.6, 1.7, 1.8, 1.9, 2.0, 2.1, 2.2)
ANGLE_SET_DEG = (-44.69, -36.1, -26.93, -17.76, -9.17, 0.0, 9.17, 17.76, 26.93, 36.1, 44.69)


class EpisodeFinishedError(RuntimeError):
    """step() called after the episode terminated or was truncated."""


def _check_keys(cls, data: dict, what: str):
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ValueError(f"unknown {what} key(s): {sorted(unknown)}")


@dataclass(frozen=True)
class RewardWeights:
    alive_bonus: float = 1.5
    pos_coeff: float = 1.0
    roll_rate_coeff: float = 0.05
    pitch_rate_coeff: float = 0.05
    yaw_rate_coeff: float = 0.1

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) < 0:
                raise ValueError(f"reward weight {f.name} must be non-negative")


@dataclass(frozen=True)
class InitDistribution:
    """Discrete uniform sets for the drop pose; each component drawn independently."""

    xy_set: tuple[float, ...] = XY_SET
    z_set: tuple[float, ...] = Z_SET
    angle_set_deg: tuple[float, ...] = ANGLE_SET_DEG

    def __post_init__(self):
        for name in ("xy_set", "z_set", "angle_set_deg"):
            values = tuple(float(v) for v in getattr(self, name))
            if not values:
                raise ValueError(f"{name} must not be empty")
            object.__setattr__(self, name, values)

    @classmethod
    def limited(cls, max_offset: float, max_angle_deg: float) -> "InitDistribution":
        """Subsets of the default sets within an offset/angle of the nominal target."""
        return cls(
            xy_set=tuple(v for v in XY_SET if abs(v) <= max_offset + 1e-9),
            z_set=tuple(v for v in Z_SET if abs(v - 1.7) <= max_offset + 1e-9),
            angle_set_deg=tuple(v for v in ANGLE_SET_DEG if abs(v) <= max_angle_deg + 1e-9),
        )

    def sample(self, rng: np.random.Generator) -> tuple[np.ndarray, tuple[float, float, float]]:
        xy = rng.choice(len(self.xy_set), size=2)
        z = rng.choice(len(self.z_set))
        ang = rng.choice(len(self.angle_set_deg), size=3)
        position = np.array([self.xy_set[xy[0]], self.xy_set[xy[1]], self.z_set[z]])
        euler = tuple(math.radians(self.angle_set_deg[i]) for i in ang)
        return position, euler


@dataclass(frozen=True)
class TargetPath:
    kind: str = "fixed"
    speed: float = 0.0
    start: tuple[float, float, float] = (0.0, 0.0, 1.7)
    square_side: float = 2.0
    square_center: tuple[float, float] = (0.0, 0.0)
    sine_amplitude: float = 1.0
    sine_wavelength: float = 4.0

    KINDS = ("fixed", "line", "square", "sinusoid")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown path kind {self.kind!r}; expected one of {self.KINDS}")
        if self.speed < 0:
            raise ValueError("path speed must be non-negative")
        object.__setattr__(self, "start", tuple(float(v) for v in self.start))
        object.__setattr__(self, "square_center", tuple(float(v) for v in self.square_center))

    def position(self, t: float) -> np.ndarray:
        if t < 0:
            raise ValueError("time must be non-negative")
        x0, y0, z0 = self.start
        if self.kind == "fixed":
            return np.array([x0, y0, z0])
        s = self.speed * t
        if self.kind == "line":
            return np.array([x0 + s, y0, z0])
        if self.kind == "sinusoid":
            return np.array([x0 + s, y0, z0 + self.sine_amplitude * math.sin(2.0 * math.pi * s / self.sine_wavelength)])
        # square: start at the (-,-) corner, counter-clockwise seen from above
        side = self.square_side
        cx, cy = self.square_center
        half = 0.5 * side
        corners = [(cx - half, cy - half), (cx + half, cy - half), (cx + half, cy + half), (cx - half, cy + half)]
        s = s % (4.0 * side)
        k = min(int(s // side), 3)
        frac = (s - k * side) / side
        (ax, ay), (bx, by) = corners[k], corners[(k + 1) % 4]
        return np.array([ax + frac * (bx - ax), ay + frac * (by - ay), z0])


@dataclass(frozen=True)
class EpisodeConfig:
    control_dt: float = 0.05
    max_steps_train: int = 250
    max_steps_eval: int = 500
    termination_radius: float = 6.5
    target_position: tuple[float, float, float] = (0.0, 0.0, 1.7)
    target_attitude: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if self.max_steps_train <= 0 or self.max_steps_eval <= 0:
            raise ValueError("max_steps must be positive")
        if self.termination_radius <= 0:
            raise ValueError("termination_radius must be positive")
        if self.control_dt <= 0:
            raise ValueError("control_dt must be positive")
        object.__setattr__(self, "target_position", tuple(float(v) for v in self.target_position))
        object.__setattr__(self, "target_attitude", tuple(float(v) for v in self.target_attitude))


def wrap_angle(a: float) -> float:
    return math.atan2(math.sin(a), math.cos(a))


def reward(state: RigidState, target_position, weights: RewardWeights = RewardWeights()) -> float:
    """Alive bonus minus distance and absolute body-rate penalties."""
    err = state.position - np.asarray(target_position, dtype=np.float64)
    dist = math.sqrt(float(err @ err))
    p, q, r = (abs(float(w)) for w in state.ang_vel)
    return (
        weights.alive_bonus
        - weights.pos_coeff * dist
        - weights.roll_rate_coeff * p
        - weights.pitch_rate_coeff * q
        - weights.yaw_rate_coeff * r
    )


def build_observation(state: RigidState, target_position, target_attitude, prev_action) -> np.ndarray:
    euler = euler_from_rotation(state.rotation)
    rel_euler = [wrap_angle(a - b) for a, b in zip(euler, target_attitude)]
    return np.concatenate([
        np.asarray(target_position, dtype=np.float64) - state.position,
        rel_euler,
        state.lin_vel,
        state.ang_vel,
        state.rotation.reshape(9),
        np.asarray(prev_action, dtype=np.float64),
    ])


@dataclass
class StepResult:
    obs: np.ndarray
    reward: float
    terminated: bool
    truncated: bool


@dataclass
class GoToTargetEnv:
    """One go-to-target episode at a time; ``max_steps`` picks train or eval horizon."""

    quad: QuadParams = field(default_factory=QuadParams)
    episode: EpisodeConfig = field(default_factory=EpisodeConfig)
    weights: RewardWeights = field(default_factory=RewardWeights)
    init: InitDistribution = field(default_factory=InitDistribution)
    path: TargetPath | None = None
    max_steps: int | None = None
    seed: int | None = None

    def __post_init__(self):
        if self.path is None:
            self.path = TargetPath("fixed", 0.0, self.episode.target_position)
        if self.max_steps is None:
            self.max_steps = self.episode.max_steps_train
        self.rng = np.random.default_rng(self.seed)
        self.state: RigidState | None = None
        self.t = 0.0
        self.steps = 0
        self.prev_action = np.zeros(ACT_DIM)
        self.done = True

    @property
    def target_position(self) -> np.ndarray:
        return self.path.position(self.t)

    def observe(self) -> np.ndarray:
        return build_observation(self.state, self.target_position, self.episode.target_attitude, self.prev_action)

    def reset(self, seed: int | None = None, pose=None) -> np.ndarray:
        """Start an episode from a sampled drop pose or an explicit ``(position, euler)``."""
        if seed is not None:
            self.rng = np.random.default_rng(seed)
        if pose is None:
            position, euler = self.init.sample(self.rng)
        else:
            position, euler = pose
            position = np.asarray(position, dtype=np.float64).reshape(3)
            euler = tuple(float(a) for a in euler)
            if not (np.isfinite(position).all() and all(math.isfinite(a) for a in euler)):
                raise ValueError(f"explicit pose has non-finite components: {pose}")
        self.state = RigidState(position, rotation_from_euler(*euler))
        self.t = 0.0
        self.steps = 0
        self.prev_action = np.zeros(ACT_DIM)
        self.done = False
        return self.observe()

    def step(self, action) -> StepResult:
        if self.done:
            raise EpisodeFinishedError("episode is over; call reset() first")
        action = clamp_pwm(action)
        self.state = step_physics(self.state, action, self.quad, self.episode.control_dt)
        self.steps += 1
        self.t = self.steps * self.episode.control_dt
        self.prev_action = action
        target = self.target_position
        r = reward(self.state, target, self.weights)
        dist = float(np.linalg.norm(self.state.position - target))
        terminated = dist > self.episode.termination_radius
        truncated = self.steps >= self.max_steps
        self.done = terminated or truncated
        return StepResult(self.observe(), r, terminated, truncated)

    def distance_to_target(self) -> float:
        return float(np.linalg.norm(self.state.position - self.target_position))


def random_action(rng: np.random.Generator) -> np.ndarray:
    return rng.uniform(-PWM_LIMIT, PWM_LIMIT, size=ACT_DIM)


def prev_action_input_scale(action_scale: float = PWM_LIMIT) -> tuple[float, ...]:
    """Per-feature network input multiplier that brings the previous-action block to [-1, 1].

    Every other observation feature is left as is.
    """
    return (1.0,) * (OBS_DIM - ACT_DIM) + (1.0 / action_scale,) * ACT_DIM
