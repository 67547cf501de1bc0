"""Planar geometry: angle wrapping, oriented rectangles, and collision tests."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

TWO_PI = 2.0 * math.pi


def normalize_angle(a: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    a = a % TWO_PI
    if a > math.pi:
        a -= TWO_PI
    return a


def angle_diff(a: float, b: float) -> float:
    """Smallest signed difference a - b, wrapped to (-pi, pi]."""
    return normalize_angle(a - b)


def advance_pose(x: float, y: float, yaw: float, s: float,
                 curvature: float) -> tuple[float, float, float]:
    """Move a signed arc length s along a constant-curvature arc.

    Exact integration of the unicycle equations; curvature 0 degenerates to
    straight-line motion with no singular division.
    """
    if curvature == 0.0:
        return x + s * math.cos(yaw), y + s * math.sin(yaw), yaw
    dyaw = s * curvature
    r = 1.0 / curvature
    nx = x + r * (math.sin(yaw + dyaw) - math.sin(yaw))
    ny = y + r * (math.cos(yaw) - math.cos(yaw + dyaw))
    return nx, ny, yaw + dyaw


@dataclass(frozen=True)
class OrientedBox:
    """Rectangle centered at (cx, cy), heading yaw, size length x width."""

    cx: float
    cy: float
    yaw: float
    length: float
    width: float

    def corners(self) -> np.ndarray:
        """Corner coordinates, shape (4, 2), CCW starting at the rear-right."""
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        hl, hw = 0.5 * self.length, 0.5 * self.width
        local = np.array([(-hl, -hw), (hl, -hw), (hl, hw), (-hl, hw)])
        rot = np.array([(c, -s), (s, c)])
        return local @ rot.T + (self.cx, self.cy)

    @property
    def bounding_radius(self) -> float:
        return 0.5 * math.hypot(self.length, self.width)

    def contains_point(self, px: float, py: float) -> bool:
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        dx, dy = px - self.cx, py - self.cy
        u = dx * c + dy * s
        v = -dx * s + dy * c
        return abs(u) <= 0.5 * self.length and abs(v) <= 0.5 * self.width

    def distance_to_point(self, px: float, py: float) -> float:
        """Euclidean distance from a point to the rectangle (0 inside)."""
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        dx, dy = px - self.cx, py - self.cy
        u = abs(dx * c + dy * s) - 0.5 * self.length
        v = abs(-dx * s + dy * c) - 0.5 * self.width
        return math.hypot(max(u, 0.0), max(v, 0.0))

    def inflated(self, margin: float) -> "OrientedBox":
        return OrientedBox(self.cx, self.cy, self.yaw,
                           self.length + 2.0 * margin, self.width + 2.0 * margin)


def rect_axes(corners: np.ndarray) -> np.ndarray:
    """Two unit edge directions of a rectangle given its corners, shape (2, 2)."""
    e0 = corners[1] - corners[0]
    e1 = corners[3] - corners[0]
    axes = np.stack([e0, e1])
    norms = np.linalg.norm(axes, axis=1, keepdims=True)
    norms[norms == 0.0] = 1.0
    return axes / norms


def rects_intersect(ca: np.ndarray, cb: np.ndarray) -> bool:
    """Separating-axis test between two rectangles given as (4, 2) corners."""
    for corners in (ca, cb):
        for axis in rect_axes(corners):
            pa = ca @ axis
            pb = cb @ axis
            if pa.max() < pb.min() or pb.max() < pa.min():
                return False
    return True


def disc_intersects_rect(px: float, py: float, radius: float,
                         box: OrientedBox) -> bool:
    return box.distance_to_point(px, py) <= radius


class BoxSet:
    """A fixed collection of oriented rectangles with precomputed SAT data.

    Supports a vectorized footprint-vs-all test; an empty set is allowed.
    """

    def __init__(self, boxes):
        self.boxes = tuple(boxes)
        n = len(self.boxes)
        if n == 0:
            self.corners = np.zeros((0, 4, 2))
            self.axes = np.zeros((0, 2, 2))
            self._own_lo = np.zeros((0, 2))
            self._own_hi = np.zeros((0, 2))
            return
        self.corners = np.stack([b.corners() for b in self.boxes])
        e0 = self.corners[:, 1] - self.corners[:, 0]
        e1 = self.corners[:, 3] - self.corners[:, 0]
        axes = np.stack([e0, e1], axis=1)
        axes /= np.linalg.norm(axes, axis=2, keepdims=True)
        self.axes = axes
        own = np.einsum("nce,nae->nac", self.corners, axes)
        self._own_lo = own.min(axis=2)
        self._own_hi = own.max(axis=2)

    def __len__(self) -> int:
        return len(self.boxes)

    def hit_mask(self, rect_corners: np.ndarray) -> np.ndarray:
        """Boolean per-box intersection mask for a (4, 2) rectangle."""
        if len(self.boxes) == 0:
            return np.zeros(0, dtype=bool)
        # footprint corners projected onto each box's axes
        p1 = np.einsum("ce,nae->nac", rect_corners, self.axes)
        lo1, hi1 = p1.min(axis=2), p1.max(axis=2)
        ok1 = (hi1 >= self._own_lo) & (self._own_hi >= lo1)
        # box corners projected onto the footprint's axes
        fp_axes = rect_axes(rect_corners)
        p2 = np.einsum("nce,ae->nac", self.corners, fp_axes)
        lo2, hi2 = p2.min(axis=2), p2.max(axis=2)
        fp_own = rect_corners @ fp_axes.T
        fp_lo, fp_hi = fp_own.min(axis=0), fp_own.max(axis=0)
        ok2 = (hi2 >= fp_lo) & (fp_hi >= lo2)
        return ok1.all(axis=1) & ok2.all(axis=1)

    def any_hit(self, rect_corners: np.ndarray) -> bool:
        return bool(self.hit_mask(rect_corners).any())
