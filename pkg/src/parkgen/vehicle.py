"""Kinematic bicycle vehicle: geometry, exact-arc propagation, pedal mapping."""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import IntEnum

import numpy as np

from .geometry import OrientedBox, normalize_angle


class Gear(IntEnum):
    FORWARD = 1
    REVERSE = -1


@dataclass(frozen=True)
class Pose2D:
    """Planar pose; yaw is CCW from +x and kept in (-pi, pi]."""

    x: float
    y: float
    yaw: float

    def __post_init__(self):
        object.__setattr__(self, "yaw", normalize_angle(self.yaw))


@dataclass(frozen=True)
class VehicleParams:
    wheelbase: float = 2.9        # [m]
    body_length: float = 4.8      # [m]
    body_width: float = 2.0       # [m]
    rear_overhang: float = 1.0    # [m] rear axle to rear bumper
    max_steer: float = 0.6        # [rad]
    max_accel: float = 2.0        # [m/s^2]
    max_decel: float = 3.0        # [m/s^2], positive magnitude
    v_max_fwd: float = 3.0        # [m/s]
    v_max_rev: float = 2.0        # [m/s], positive magnitude

    def __post_init__(self):
        vals = (self.wheelbase, self.body_length, self.body_width,
                self.rear_overhang, self.max_steer, self.max_accel,
                self.max_decel, self.v_max_fwd, self.v_max_rev)
        if any(v <= 0.0 for v in vals):
            raise ValueError("all vehicle parameters must be strictly positive")
        if self.max_steer >= math.pi / 2:
            raise ValueError("max_steer must be below pi/2")
        if self.rear_overhang >= self.body_length:
            raise ValueError("rear_overhang must be smaller than body_length")

    @property
    def min_turn_radius(self) -> float:
        return self.wheelbase / math.tan(self.max_steer)

    @property
    def center_offset(self) -> float:
        """Rear axle to body center, along the heading."""
        return 0.5 * self.body_length - self.rear_overhang


@dataclass(frozen=True)
class VehicleState:
    pose: Pose2D
    v: float = 0.0          # [m/s], signed (negative = reversing)
    a: float = 0.0          # [m/s^2], last commanded acceleration
    steer: float = 0.0      # [rad], positive = left
    gear: Gear = Gear.FORWARD


@dataclass(frozen=True)
class ControlCommand:
    throttle: float     # [0, 1]
    brake: float        # [0, 1]
    steer_norm: float   # [-1, 1]
    reverse: bool


def _clamp(x: float, lo: float, hi: float) -> float:
    return lo if x < lo else hi if x > hi else x


def step_kinematics(state: VehicleState, accel: float, steer: float,
                    dt: float, params: VehicleParams) -> VehicleState:
    """Propagate the bicycle model over dt with piecewise-constant inputs.

    The pose update integrates the arc exactly (constant curvature, arc
    length equal to the integral of the saturated speed), so circles close
    up to floating-point error and steps are reversible.
    """
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    a = _clamp(accel, -params.max_decel, params.max_accel)
    delta = _clamp(steer, -params.max_steer, params.max_steer)
    lo, hi = -params.v_max_rev, params.v_max_fwd
    v0 = _clamp(state.v, lo, hi)

    v1 = v0 + a * dt
    if v1 > hi or v1 < lo:
        vb = hi if v1 > hi else lo
        t_hit = (vb - v0) / a
        s = v0 * t_hit + 0.5 * a * t_hit * t_hit + vb * (dt - t_hit)
        v1 = vb
    else:
        s = v0 * dt + 0.5 * a * dt * dt

    x, y, yaw = state.pose.x, state.pose.y, state.pose.yaw
    if delta == 0.0:
        x += s * math.cos(yaw)
        y += s * math.sin(yaw)
    else:
        curv = math.tan(delta) / params.wheelbase
        dyaw = s * curv
        r = 1.0 / curv
        x += r * (math.sin(yaw + dyaw) - math.sin(yaw))
        y += r * (math.cos(yaw) - math.cos(yaw + dyaw))
        yaw += dyaw

    return VehicleState(pose=Pose2D(x, y, yaw), v=v1, a=a, steer=delta,
                        gear=state.gear)


def footprint_box(pose: Pose2D, params: VehicleParams) -> OrientedBox:
    """Body rectangle for a rear-axle pose."""
    d = params.center_offset
    return OrientedBox(pose.x + d * math.cos(pose.yaw),
                       pose.y + d * math.sin(pose.yaw),
                       pose.yaw, params.body_length, params.body_width)


def footprint(state: VehicleState, params: VehicleParams) -> np.ndarray:
    """Body corner coordinates, shape (4, 2), CCW starting rear-right."""
    return footprint_box(state.pose, params).corners()


def body_center(pose: Pose2D, params: VehicleParams) -> tuple[float, float]:
    d = params.center_offset
    return pose.x + d * math.cos(pose.yaw), pose.y + d * math.sin(pose.yaw)


def accel_to_pedals(accel: float, steer: float, gear: Gear,
                    params: VehicleParams) -> ControlCommand:
    """Map an acceleration/steer command to throttle, brake, steer signals."""
    if accel >= 0.0:
        throttle = _clamp(accel / params.max_accel, 0.0, 1.0)
        brake = 0.0
    else:
        throttle = 0.0
        brake = _clamp(-accel / params.max_decel, 0.0, 1.0)
    steer_norm = _clamp(steer / params.max_steer, -1.0, 1.0)
    return ControlCommand(throttle=throttle, brake=brake,
                          steer_norm=steer_norm, reverse=gear == Gear.REVERSE)


def pedals_to_accel(cmd: ControlCommand,
                    params: VehicleParams) -> tuple[float, float]:
    """Inverse of accel_to_pedals; exact for in-bounds commands."""
    accel = cmd.throttle * params.max_accel - cmd.brake * params.max_decel
    return accel, cmd.steer_norm * params.max_steer


DEFAULT_VEHICLE = VehicleParams()
