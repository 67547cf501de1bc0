"""Shortest bounded-curvature forward/reverse paths between planar poses.

Candidate maneuvers come from the twelve classical word families evaluated
under the timeflip / reflect / backwards symmetries (backwards variants are
written out as explicit families), giving the full 48-word set. Arc segment
parameters are in radians at unit turning radius and are scaled to meters
on output.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .geometry import advance_pose, normalize_angle
from .vehicle import Pose2D

LEFT, STRAIGHT, RIGHT = 1, 0, -1
FWD, REV = 1, -1

_ZERO = 1e-12


@dataclass(frozen=True)
class RSSegment:
    steer: int       # LEFT / STRAIGHT / RIGHT
    direction: int   # FWD / REV
    length: float    # [m], >= 0


@dataclass(frozen=True)
class RSPath:
    segments: tuple[RSSegment, ...]
    turning_radius: float
    total_length: float


def _polar(x: float, y: float) -> tuple[float, float]:
    return math.hypot(x, y), math.atan2(y, x)


def _asin(v: float) -> float:
    return math.asin(min(1.0, max(-1.0, v)))


def _acos(v: float) -> float:
    return math.acos(min(1.0, max(-1.0, v)))


def _m(theta: float) -> float:
    """Wrap to [-pi, pi)."""
    theta = theta % (2.0 * math.pi)
    if theta >= math.pi:
        theta -= 2.0 * math.pi
    return theta


# Each family returns zero or one parameter tuples matching its pattern
# length; negative parameters are canonicalized later by flipping gear.

def _lsl(x, y, phi):
    u, t = _polar(x - math.sin(phi), y - 1.0 + math.cos(phi))
    return [(t, u, _m(phi - t))]


def _lsr(x, y, phi):
    rho, t1 = _polar(x + math.sin(phi), y - 1.0 - math.cos(phi))
    if rho * rho < 4.0:
        return []
    u = math.sqrt(rho * rho - 4.0)
    t = _m(t1 + math.atan2(2.0, u))
    return [(t, u, _m(t - phi))]


def _lrl(x, y, phi):
    rho, theta = _polar(x - math.sin(phi), y - 1.0 + math.cos(phi))
    if rho > 4.0:
        return []
    a = _acos(rho / 4.0)
    t = _m(theta + 0.5 * math.pi + a)
    u = _m(math.pi - 2.0 * a)
    return [(t, u, _m(phi - t - u))]


def _lrl_rev(x, y, phi):
    rho, theta = _polar(x - math.sin(phi), y - 1.0 + math.cos(phi))
    if rho > 4.0:
        return []
    a = _acos(rho / 4.0)
    t = _m(theta + 0.5 * math.pi + a)
    u = _m(math.pi - 2.0 * a)
    return [(t, u, _m(t + u - phi))]


def _llr(x, y, phi):
    rho, theta = _polar(x - math.sin(phi), y - 1.0 + math.cos(phi))
    if rho > 4.0 or rho < _ZERO:
        return []
    u = _acos(1.0 - rho * rho / 8.0)
    a = _asin(2.0 * math.sin(u) / rho)
    t = _m(theta + 0.5 * math.pi - a)
    return [(t, u, _m(t - u - phi))]


def _lrlr_same(x, y, phi):
    rho, theta = _polar(x + math.sin(phi), y - 1.0 - math.cos(phi))
    if rho > 4.0:
        return []
    if rho <= 2.0:
        a = _acos((rho + 2.0) / 4.0)
        t = _m(theta + 0.5 * math.pi + a)
        u = _m(a)
    else:
        a = _acos((rho - 2.0) / 4.0)
        t = _m(theta + 0.5 * math.pi - a)
        u = _m(math.pi - a)
    return [(t, u, u, _m(phi - t + 2.0 * u))]


def _lrlr_back(x, y, phi):
    rho, theta = _polar(x + math.sin(phi), y - 1.0 - math.cos(phi))
    u1 = (20.0 - rho * rho) / 16.0
    if rho > 6.0 or not (0.0 <= u1 <= 1.0):
        return []
    u = _acos(u1)
    a = _asin(2.0 * math.sin(u) / rho)
    t = _m(theta + 0.5 * math.pi + a)
    return [(t, u, u, _m(t - phi))]


def _lr90sl(x, y, phi):
    rho, theta = _polar(x - math.sin(phi), y - 1.0 + math.cos(phi))
    if rho < 2.0:
        return []
    u = math.sqrt(rho * rho - 4.0) - 2.0
    a = math.atan2(2.0, u + 2.0)
    t = _m(theta + 0.5 * math.pi + a)
    return [(t, 0.5 * math.pi, u, _m(t - phi + 0.5 * math.pi))]


def _lsr90l(x, y, phi):
    rho, theta = _polar(x - math.sin(phi), y - 1.0 + math.cos(phi))
    if rho < 2.0:
        return []
    u = math.sqrt(rho * rho - 4.0) - 2.0
    a = math.atan2(u + 2.0, 2.0)
    t = _m(theta + 0.5 * math.pi - a)
    return [(t, u, 0.5 * math.pi, _m(t - phi - 0.5 * math.pi))]


def _lr90sr(x, y, phi):
    rho, theta = _polar(x + math.sin(phi), y - 1.0 - math.cos(phi))
    if rho < 2.0:
        return []
    t = _m(theta + 0.5 * math.pi)
    u = rho - 2.0
    return [(t, 0.5 * math.pi, u, _m(phi - t - 0.5 * math.pi))]


def _lsl90r(x, y, phi):
    rho, theta = _polar(x + math.sin(phi), y - 1.0 - math.cos(phi))
    if rho < 2.0:
        return []
    t = _m(theta)
    u = rho - 2.0
    return [(t, u, 0.5 * math.pi, _m(phi - t - 0.5 * math.pi))]


def _lr90sl90r(x, y, phi):
    rho, theta = _polar(x + math.sin(phi), y - 1.0 - math.cos(phi))
    if rho < 4.0:
        return []
    u = math.sqrt(rho * rho - 4.0) - 4.0
    a = math.atan2(2.0, u + 4.0)
    t = _m(theta + 0.5 * math.pi + a)
    return [(t, 0.5 * math.pi, u, 0.5 * math.pi, _m(t - phi))]


# (family function, segment pattern); pattern entries are (steer, gear).
_FAMILIES = (
    (_lsl, ((LEFT, FWD), (STRAIGHT, FWD), (LEFT, FWD))),
    (_lsr, ((LEFT, FWD), (STRAIGHT, FWD), (RIGHT, FWD))),
    (_lrl, ((LEFT, FWD), (RIGHT, REV), (LEFT, FWD))),
    (_lrl_rev, ((LEFT, FWD), (RIGHT, REV), (LEFT, REV))),
    (_llr, ((LEFT, FWD), (RIGHT, FWD), (LEFT, REV))),
    (_lrlr_same, ((LEFT, FWD), (RIGHT, FWD), (LEFT, REV), (RIGHT, REV))),
    (_lrlr_back, ((LEFT, FWD), (RIGHT, REV), (LEFT, REV), (RIGHT, FWD))),
    (_lr90sl, ((LEFT, FWD), (RIGHT, REV), (STRAIGHT, REV), (LEFT, REV))),
    (_lsr90l, ((LEFT, FWD), (STRAIGHT, FWD), (RIGHT, FWD), (LEFT, REV))),
    (_lr90sr, ((LEFT, FWD), (RIGHT, REV), (STRAIGHT, REV), (RIGHT, REV))),
    (_lsl90r, ((LEFT, FWD), (STRAIGHT, FWD), (LEFT, FWD), (RIGHT, REV))),
    (_lr90sl90r, ((LEFT, FWD), (RIGHT, REV), (STRAIGHT, REV),
                  (LEFT, REV), (RIGHT, FWD))),
)

# (x, y, phi) sign masks for identity, timeflip, reflect, timeflip+reflect.
_VARIANTS = (
    (1.0, 1.0, 1.0, False, False),
    (-1.0, 1.0, -1.0, True, False),
    (1.0, -1.0, -1.0, False, True),
    (-1.0, -1.0, 1.0, True, True),
)


def _goal_in_start_frame(q0: Pose2D, q1: Pose2D,
                         radius: float) -> tuple[float, float, float]:
    dx = q1.x - q0.x
    dy = q1.y - q0.y
    c, s = math.cos(q0.yaw), math.sin(q0.yaw)
    x = (dx * c + dy * s) / radius
    y = (-dx * s + dy * c) / radius
    return x, y, normalize_angle(q1.yaw - q0.yaw)


def _candidate_words(x: float, y: float, phi: float):
    """Yield candidate segment words as tuples of (steer, gear, param >= 0)."""
    for fn, pattern in _FAMILIES:
        for sx, sy, sp, timeflip, reflect in _VARIANTS:
            for params in fn(sx * x, sy * y, sp * phi):
                word = []
                for (steer, gear), p in zip(pattern, params):
                    if timeflip:
                        gear = -gear
                    if reflect:
                        steer = -steer
                    if p < 0.0:
                        p, gear = -p, -gear
                    if p > _ZERO:
                        word.append((steer, gear, p))
                if word:
                    yield word


def shortest_path_length(q0: Pose2D, q1: Pose2D, radius: float) -> float:
    """Length of the shortest path in meters, without building segments."""
    if radius <= 0.0:
        raise ValueError("turning radius must be positive")
    x, y, phi = _goal_in_start_frame(q0, q1, radius)
    if x * x + y * y < _ZERO and abs(phi) < _ZERO:
        return 0.0
    best = math.inf
    for fn, _pattern in _FAMILIES:
        for sx, sy, sp, _tf, _rf in _VARIANTS:
            for params in fn(sx * x, sy * y, sp * phi):
                total = sum(abs(p) for p in params)
                if total < best:
                    best = total
    return best * radius


def shortest_path(q0: Pose2D, q1: Pose2D, radius: float) -> RSPath:
    """Shortest Reeds-Shepp path; ties broken by segment encoding."""
    if radius <= 0.0:
        raise ValueError("turning radius must be positive")
    x, y, phi = _goal_in_start_frame(q0, q1, radius)
    if x * x + y * y < _ZERO and abs(phi) < _ZERO:
        return RSPath(segments=(), turning_radius=radius, total_length=0.0)
    best_word = None
    best_key = None
    for word in _candidate_words(x, y, phi):
        total = sum(p for _, _, p in word)
        key = (total, tuple(word))
        if best_key is None or key < best_key:
            best_key = key
            best_word = word
    segments = tuple(RSSegment(steer=s, direction=g, length=p * radius)
                     for s, g, p in best_word)
    return RSPath(segments=segments, turning_radius=radius,
                  total_length=best_key[0] * radius)


def sample_path(path: RSPath, q0: Pose2D,
                step: float) -> list[tuple[Pose2D, int]]:
    """Poses along the path at arc-length intervals <= step.

    Both endpoints are included. Each sample is annotated with the direction
    of the motion arriving at it (the first sample takes the first segment's
    direction).
    """
    if step <= 0.0:
        raise ValueError("step must be positive")
    if not path.segments:
        return [(q0, FWD)]
    out = [(q0, path.segments[0].direction)]
    x, y, yaw = q0.x, q0.y, q0.yaw
    for seg in path.segments:
        curv = seg.steer / path.turning_radius
        n = max(1, math.ceil(seg.length / step - 1e-12))
        ds = seg.length / n
        for _ in range(n):
            x, y, yaw = advance_pose(x, y, yaw, seg.direction * ds, curv)
            out.append((Pose2D(x, y, yaw), seg.direction))
    return out
