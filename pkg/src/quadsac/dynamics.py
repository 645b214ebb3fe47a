"""Rigid-body quadrotor simulation.

Body frame: x forward, y left, z up. Rotors sit on the diagonals at
``arm_length`` from the centre, indexed front-left, front-right,
rear-right, rear-left (0..3). Front-left and rear-right spin
counter-clockwise seen from above, the other pair clockwise, so the
reaction yaw moment is ``yaw_torque_coeff * ((T1 + T3) - (T0 + T2))``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields

import numpy as np

PWM_LIMIT = 100.0
MOTOR_ORDER = ("front_left", "front_right", "rear_right", "rear_left")


class PhysicsError(ValueError):
    """Raised when the simulator is fed non-finite or malformed input."""


@dataclass(frozen=True)
class QuadParams:
    mass: float = 0.45
    inertia_diag: tuple[float, float, float] = (2.4e-3, 2.4e-3, 4.5e-3)
    arm_length: float = 0.178
    gravity: float = 9.81
    thrust_coeffs: tuple[float, float, float] = (1.5618e-4, 1.0395e-2, 0.13894)
    yaw_torque_coeff: float = 0.016
    linear_drag_coeff: float = 0.1
    angular_drag_coeff: float = 0.01
    physics_substeps: int = 10
    clamp_thrust_at_zero: bool = False

    def __post_init__(self):
        object.__setattr__(self, "inertia_diag", tuple(float(v) for v in self.inertia_diag))
        object.__setattr__(self, "thrust_coeffs", tuple(float(v) for v in self.thrust_coeffs))
        if len(self.inertia_diag) != 3 or len(self.thrust_coeffs) != 3:
            raise ValueError("inertia_diag and thrust_coeffs need exactly 3 values")
        if not self.mass > 0:
            raise ValueError(f"mass must be positive, got {self.mass}")
        if not all(v > 0 for v in self.inertia_diag):
            raise ValueError(f"inertia_diag must be positive, got {self.inertia_diag}")
        if not self.arm_length > 0:
            raise ValueError(f"arm_length must be positive, got {self.arm_length}")
        if int(self.physics_substeps) != self.physics_substeps or self.physics_substeps < 1:
            raise ValueError(f"physics_substeps must be an integer >= 1, got {self.physics_substeps}")

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            value = getattr(self, f.name)
            out[f.name] = list(value) if isinstance(value, tuple) else value
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "QuadParams":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown quad parameter(s): {sorted(unknown)}")
        return cls(**data)

    def hover_pwm(self) -> float:
        """PWM at which four equal rotors carry the vehicle's weight."""
        a2, a1, a0 = self.thrust_coeffs
        c = a0 - self.mass * self.gravity / 4.0
        if a2 == 0.0:
            return -c / a1
        disc = a1 * a1 - 4.0 * a2 * c
        if disc < 0:
            raise ValueError("thrust polynomial never reaches hover thrust")
        return (-a1 + math.sqrt(disc)) / (2.0 * a2)


@dataclass
class RigidState:
    """Position, body-to-world rotation, world linear and body angular velocity."""

    position: np.ndarray
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    lin_vel: np.ndarray = field(default_factory=lambda: np.zeros(3))
    ang_vel: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.position = np.array(self.position, dtype=np.float64).reshape(3)
        self.rotation = np.array(self.rotation, dtype=np.float64).reshape(3, 3)
        self.lin_vel = np.array(self.lin_vel, dtype=np.float64).reshape(3)
        self.ang_vel = np.array(self.ang_vel, dtype=np.float64).reshape(3)

    def copy(self) -> "RigidState":
        return RigidState(self.position, self.rotation, self.lin_vel, self.ang_vel)

    def is_finite(self) -> bool:
        return bool(
            np.isfinite(self.position).all()
            and np.isfinite(self.rotation).all()
            and np.isfinite(self.lin_vel).all()
            and np.isfinite(self.ang_vel).all()
        )


def thrust_from_pwm(pwm, params: QuadParams | None = None):
    """Propeller thrust in newtons for a PWM command (scalar or array)."""
    a2, a1, a0 = (params or QuadParams()).thrust_coeffs
    thrust = a2 * pwm * pwm + a1 * pwm + a0
    if params is not None and params.clamp_thrust_at_zero:
        thrust = np.maximum(thrust, 0.0)
    return thrust


def clamp_pwm(cmd) -> np.ndarray:
    cmd = np.asarray(cmd, dtype=np.float64).reshape(4)
    return np.clip(cmd, -PWM_LIMIT, PWM_LIMIT)


def body_wrench(thrusts: np.ndarray, params: QuadParams) -> tuple[float, np.ndarray]:
    """Collective thrust and body torque from the four rotor thrusts."""
    t0, t1, t2, t3 = (float(t) for t in thrusts)
    d = params.arm_length / math.sqrt(2.0)
    roll = d * ((t0 + t3) - (t1 + t2))
    pitch = d * ((t2 + t3) - (t0 + t1))
    yaw = params.yaw_torque_coeff * ((t1 + t3) - (t0 + t2))
    return t0 + t1 + t2 + t3, np.array([roll, pitch, yaw])


def so3_exp(w) -> np.ndarray:
    """Rotation matrix for the rotation vector ``w`` (Rodrigues)."""
    wx, wy, wz = w
    theta = math.sqrt(wx * wx + wy * wy + wz * wz)
    K = np.array([[0.0, -wz, wy], [wz, 0.0, -wx], [-wy, wx, 0.0]])
    if theta < 1e-8:
        # second-order series; error below 1e-24
        return np.eye(3) + K + 0.5 * (K @ K)
    s = math.sin(theta) / theta
    c = (1.0 - math.cos(theta)) / (theta * theta)
    return np.eye(3) + s * K + c * (K @ K)


def orthonormalize(R: np.ndarray) -> np.ndarray:
    """Gram-Schmidt on the columns; keeps the first body axis direction."""
    x = R[:, 0] / np.linalg.norm(R[:, 0])
    y = R[:, 1] - np.dot(x, R[:, 1]) * x
    y = y / np.linalg.norm(y)
    z = np.cross(x, y)
    return np.column_stack((x, y, z))


def step_physics(state: RigidState, cmd, params: QuadParams, dt_control: float) -> RigidState:
    """Advance the vehicle by one control interval with a held motor command.

    Each substep updates the velocities first and then moves the position
    with the mean of the old and new velocity, which is exact under
    constant acceleration. Attitude is advanced with the exponential map
    of the updated body rate and re-orthonormalised once per call.
    """
    if not dt_control > 0 or not math.isfinite(dt_control):
        raise PhysicsError(f"dt_control must be positive and finite, got {dt_control}")
    cmd = np.asarray(cmd, dtype=np.float64).reshape(-1)
    if cmd.shape != (4,):
        raise PhysicsError(f"motor command needs 4 values, got {cmd.shape[0]}")
    if not np.isfinite(cmd).all():
        raise PhysicsError(f"non-finite motor command {cmd}")
    if not state.is_finite():
        raise PhysicsError("non-finite rigid state")

    thrusts = thrust_from_pwm(clamp_pwm(cmd), params)
    collective, torque = body_wrench(thrusts, params)
    n = int(params.physics_substeps)
    h = dt_control / n
    Ix, Iy, Iz = params.inertia_diag
    tx, ty, tz = (float(v) for v in torque)
    f_m = collective / params.mass
    kv = params.linear_drag_coeff / params.mass
    kw = params.angular_drag_coeff
    g = params.gravity

    # scalar arithmetic: numpy call overhead dominates on 3-vectors
    px, py, pz = (float(v) for v in state.position)
    vx, vy, vz = (float(v) for v in state.lin_vel)
    wx, wy, wz = (float(v) for v in state.ang_vel)
    R = state.rotation.copy()
    for _ in range(n):
        ax = R[0, 2] * f_m - kv * vx
        ay = R[1, 2] * f_m - kv * vy
        az = R[2, 2] * f_m - g - kv * vz
        nvx, nvy, nvz = vx + h * ax, vy + h * ay, vz + h * az
        px += 0.5 * h * (vx + nvx)
        py += 0.5 * h * (vy + nvy)
        pz += 0.5 * h * (vz + nvz)
        vx, vy, vz = nvx, nvy, nvz
        # Euler's equations: I dw/dt = tau - w x (I w) - c w
        dwx = (tx - (wy * Iz * wz - wz * Iy * wy) - kw * wx) / Ix
        dwy = (ty - (wz * Ix * wx - wx * Iz * wz) - kw * wy) / Iy
        dwz = (tz - (wx * Iy * wy - wy * Ix * wx) - kw * wz) / Iz
        wx, wy, wz = wx + h * dwx, wy + h * dwy, wz + h * dwz
        R = R @ so3_exp((h * wx, h * wy, h * wz))
    R = orthonormalize(R)

    out = RigidState((px, py, pz), R, (vx, vy, vz), (wx, wy, wz))
    if not out.is_finite():
        raise PhysicsError("simulation diverged to non-finite state")
    return out


def rotation_from_euler(phi: float, theta: float, psi: float) -> np.ndarray:
    """Z-Y-X intrinsic (yaw, pitch, roll) rotation: Rz(psi) @ Ry(theta) @ Rx(phi)."""
    cf, sf = math.cos(phi), math.sin(phi)
    ct, st = math.cos(theta), math.sin(theta)
    cp, sp = math.cos(psi), math.sin(psi)
    return np.array([
        [cp * ct, cp * st * sf - sp * cf, cp * st * cf + sp * sf],
        [sp * ct, sp * st * sf + cp * cf, sp * st * cf - cp * sf],
        [-st, ct * sf, ct * cf],
    ])


def euler_from_rotation(R) -> tuple[float, float, float]:
    """Inverse of :func:`rotation_from_euler`; returns psi=0 at gimbal lock."""
    R = np.asarray(R, dtype=np.float64).reshape(3, 3)
    s = -R[2, 0]
    if s >= 1.0 - 1e-15 or s <= -1.0 + 1e-15:
        theta = math.copysign(math.pi / 2.0, s)
        return math.atan2(-R[1, 2], R[1, 1]), theta, 0.0
    theta = math.atan2(s, math.hypot(R[0, 0], R[1, 0]))
    phi = math.atan2(R[2, 1], R[2, 2])
    psi = math.atan2(R[1, 0], R[0, 0])
    return phi, theta, psi
