"""Hybrid A* parking planner over (x, y, yaw, direction).

Motion-primitive search with penalized arc costs, a dual heuristic (shortest
bounded-curvature length to goal, maxed with an obstacle-aware holonomic
distance field), and periodic analytic expansion that connects to the goal
with a collision-checked Reeds-Shepp path.

Collision checking is exact (separating-axis against the static rectangles
plus a bounds test) but pre-screened by a clearance grid so the SAT test
only runs for poses near obstacles.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from . import reeds_shepp as rs
from .geometry import advance_pose, angle_diff, normalize_angle
from .vehicle import Pose2D, VehicleParams, footprint_box
from .world import LotLayout


class PlanningError(Exception):
    pass


class NoPathFound(PlanningError):
    pass


class InvalidStart(PlanningError):
    pass


class InvalidGoal(PlanningError):
    pass


@dataclass(frozen=True)
class PlannerParams:
    xy_resolution: float = 0.5                  # [m]
    yaw_resolution: float = math.radians(10.0)  # [rad]
    steering_set: tuple[float, ...] = (-0.54, -0.27, 0.0, 0.27, 0.54)
    primitive_arc_length: float = 0.75          # [m]
    reverse_weight: float = 2.0
    switch_cost: float = 3.0                    # [m-equivalent]
    steer_cost: float = 1.0                     # [m-equiv per rad]
    steer_change_cost: float = 1.5              # [m-equiv per rad]
    goal_pos_tol: float = 0.2                   # [m]
    goal_yaw_tol: float = math.radians(3.0)     # [rad]
    analytic_period: int = 20                   # expansions between RS shots
    node_budget: int = 200_000

    def __post_init__(self):
        if self.primitive_arc_length < math.sqrt(2.0) * self.xy_resolution:
            raise ValueError("primitive_arc_length must be >= sqrt(2) * xy_resolution")
        ss = self.steering_set
        if 0.0 not in ss or any(-a not in ss for a in ss):
            raise ValueError("steering_set must be symmetric about 0 and include 0")
        if self.reverse_weight < 1.0:
            raise ValueError("reverse_weight must be >= 1")


def planning_radius(vehicle: VehicleParams, params: PlannerParams) -> float:
    """Turn radius used for primitives, heuristics, and analytic expansion."""
    return vehicle.wheelbase / math.tan(max(params.steering_set))


@dataclass(frozen=True)
class PlannedPath:
    points: tuple[tuple[Pose2D, int], ...]   # (pose, arrival direction)
    switch_indices: tuple[int, ...]
    cost: float                              # penalized [m-equivalent]
    length: float                            # true arc length [m]


@dataclass
class Node:
    pose: Pose2D
    direction: int            # +1 forward, -1 reverse
    steer: float
    g: float = 0.0
    length: float = 0.0       # arc length from start
    parent_key: tuple | None = None
    prim: tuple = ()          # (pose, direction) samples from parent, exclusive


class CollisionProbe:
    """Exact static-collision test accelerated by a clearance grid.

    A fine Euclidean distance transform of the obstacle raster gives a
    definitely-free / definitely-hit decision for four discs covering the
    body; ambiguous poses fall back to the exact SAT + bounds test. The
    grid slack covers the worst-case rasterization error so the combined
    decision matches the exact test.
    """

    CELL = 0.05

    def __init__(self, layout: LotLayout, vehicle: VehicleParams, pad: float = 2.0):
        self.layout = layout
        self.vehicle = vehicle
        xmin, ymin, xmax, ymax = layout.bounds
        self.x0 = xmin - pad
        self.y0 = ymin - pad
        nx = int(math.ceil((xmax - xmin + 2 * pad) / self.CELL))
        ny = int(math.ceil((ymax - ymin + 2 * pad) / self.CELL))
        gx = self.x0 + (np.arange(nx) + 0.5) * self.CELL
        gy = self.y0 + (np.arange(ny) + 0.5) * self.CELL
        occ = np.zeros((nx, ny), dtype=bool)
        occ |= (gx[:, None] < xmin) | (gx[:, None] > xmax)
        occ |= (gy[None, :] < ymin) | (gy[None, :] > ymax)
        for box in layout.static_obstacles:
            c, s = math.cos(box.yaw), math.sin(box.yaw)
            r = box.bounding_radius
            i0 = max(0, int((box.cx - r - self.x0) / self.CELL) - 1)
            i1 = min(nx, int((box.cx + r - self.x0) / self.CELL) + 2)
            j0 = max(0, int((box.cy - r - self.y0) / self.CELL) - 1)
            j1 = min(ny, int((box.cy + r - self.y0) / self.CELL) + 2)
            if i0 >= i1 or j0 >= j1:
                continue
            dx = gx[i0:i1, None] - box.cx
            dy = gy[None, j0:j1] - box.cy
            u = dx * c + dy * s
            v = -dx * s + dy * c
            occ[i0:i1, j0:j1] |= ((np.abs(u) <= 0.5 * box.length)
                                  & (np.abs(v) <= 0.5 * box.width))
        self.clearance = (ndimage.distance_transform_edt(~occ) * self.CELL)
        self.nx, self.ny = nx, ny

        L, W = vehicle.body_length, vehicle.body_width
        self.disc_offsets = np.array([-vehicle.rear_overhang + (k + 0.5) * L / 4.0
                                      for k in range(4)])
        self.disc_radius = math.hypot(L / 8.0, W / 2.0)
        slack = self.CELL * math.sqrt(2.0)
        self.free_thresh = self.disc_radius + slack
        self.hit_thresh = min(L / 8.0, W / 2.0) - slack
        self.sat_calls = 0

    def _disc_clearances(self, xs, ys, yaws) -> np.ndarray:
        cx = xs[:, None] + np.cos(yaws)[:, None] * self.disc_offsets[None, :]
        cy = ys[:, None] + np.sin(yaws)[:, None] * self.disc_offsets[None, :]
        i = np.clip(((cx - self.x0) / self.CELL).astype(np.intp), 0, self.nx - 1)
        j = np.clip(((cy - self.y0) / self.CELL).astype(np.intp), 0, self.ny - 1)
        return self.clearance[i, j]

    def _exact_free(self, x: float, y: float, yaw: float) -> bool:
        self.sat_calls += 1
        corners = footprint_box(Pose2D(x, y, yaw), self.vehicle).corners()
        return (self.layout.in_bounds(corners)
                and not self.layout.obstacle_set.any_hit(corners))

    def pose_free(self, x: float, y: float, yaw: float) -> bool:
        d = self._disc_clearances(np.array([x]), np.array([y]), np.array([yaw]))[0]
        if d.min() >= self.free_thresh:
            return True
        if d.min() < self.hit_thresh:
            return False
        return self._exact_free(x, y, yaw)

    def poses_free(self, xs: np.ndarray, ys: np.ndarray, yaws: np.ndarray) -> np.ndarray:
        """Per-pose freeness for a batch, SAT only where the grid is ambiguous."""
        d = self._disc_clearances(xs, ys, yaws).min(axis=1)
        free = d >= self.free_thresh
        ambiguous = ~free & (d >= self.hit_thresh)
        for idx in np.nonzero(ambiguous)[0]:
            free[idx] = self._exact_free(xs[idx], ys[idx], yaws[idx])
        return free


def holonomic_distance_field(layout: LotLayout, goal: Pose2D, resolution: float,
                             vehicle: VehicleParams,
                             probe: CollisionProbe | None = None):
    """8-connected obstacle-aware distance-to-goal grid.

    Cells within half the body width of an obstacle are blocked; diagonal
    moves weigh sqrt(2) * resolution; unreachable cells hold +inf.
    Returns (grid, x0, y0, resolution).
    """
    if probe is None:
        probe = CollisionProbe(layout, vehicle)
    xmin, ymin, xmax, ymax = layout.bounds
    nx = int(math.ceil((xmax - xmin) / resolution))
    ny = int(math.ceil((ymax - ymin) / resolution))
    gx = xmin + (np.arange(nx) + 0.5) * resolution
    gy = ymin + (np.arange(ny) + 0.5) * resolution
    ci = np.clip(((gx - probe.x0) / probe.CELL).astype(np.intp), 0, probe.nx - 1)
    cj = np.clip(((gy - probe.y0) / probe.CELL).astype(np.intp), 0, probe.ny - 1)
    blocked = probe.clearance[np.ix_(ci, cj)] < 0.5 * vehicle.body_width

    dist = np.full((nx, ny), np.inf)
    gi = min(max(int((goal.x - xmin) / resolution), 0), nx - 1)
    gj = min(max(int((goal.y - ymin) / resolution), 0), ny - 1)
    blocked[gi, gj] = False
    dist[gi, gj] = 0.0
    diag = math.sqrt(2.0) * resolution
    moves = ((1, 0, resolution), (-1, 0, resolution), (0, 1, resolution),
             (0, -1, resolution), (1, 1, diag), (1, -1, diag),
             (-1, 1, diag), (-1, -1, diag))
    pq = [(0.0, gi, gj)]
    while pq:
        d, i, j = heapq.heappop(pq)
        if d > dist[i, j]:
            continue
        for di, dj, w in moves:
            ni, nj = i + di, j + dj
            if 0 <= ni < nx and 0 <= nj < ny and not blocked[ni, nj]:
                nd = d + w
                if nd < dist[ni, nj]:
                    dist[ni, nj] = nd
                    heapq.heappush(pq, (nd, ni, nj))
    return dist, xmin, ymin, resolution


def _field_value(fld, x: float, y: float) -> float:
    grid, x0, y0, res = fld
    i = min(max(int((x - x0) / res), 0), grid.shape[0] - 1)
    j = min(max(int((y - y0) / res), 0), grid.shape[1] - 1)
    return float(grid[i, j])


def expand_node(node: Node, vehicle: VehicleParams, params: PlannerParams,
                probe: CollisionProbe | None = None) -> list[Node]:
    """Successor nodes, one exact arc per (steer, direction) pair.

    When a collision probe is given, successors whose swept footprint
    (sampled at half the grid resolution) collides are dropped.
    """
    sub = max(1, math.ceil(params.primitive_arc_length / (0.5 * params.xy_resolution)))
    ds = params.primitive_arc_length / sub
    cand = []
    for steer in params.steering_set:
        curv = math.tan(steer) / vehicle.wheelbase
        for direction in (1, -1):
            x, y, yaw = node.pose.x, node.pose.y, node.pose.yaw
            prim = []
            for _ in range(sub):
                x, y, yaw = advance_pose(x, y, yaw, direction * ds, curv)
                prim.append((Pose2D(x, y, yaw), direction))
            dg = params.primitive_arc_length * (1.0 if direction > 0
                                                else params.reverse_weight)
            if direction != node.direction:
                dg += params.switch_cost
            dg += params.steer_cost * abs(steer)
            dg += params.steer_change_cost * abs(steer - node.steer)
            cand.append(Node(pose=prim[-1][0], direction=direction, steer=steer,
                             g=node.g + dg,
                             length=node.length + params.primitive_arc_length,
                             prim=tuple(prim)))
    if probe is None:
        return cand
    xs = np.array([p[0].x for n in cand for p in n.prim])
    ys = np.array([p[0].y for n in cand for p in n.prim])
    yaws = np.array([p[0].yaw for n in cand for p in n.prim])
    free = probe.poses_free(xs, ys, yaws).reshape(len(cand), sub)
    return [n for n, ok in zip(cand, free) if ok.all()]


def _rs_tail_cost(path: rs.RSPath, entry_direction: int, entry_steer: float,
                  vehicle: VehicleParams, params: PlannerParams) -> float:
    """Penalized cost of appending a Reeds-Shepp tail after a search node."""
    cost = 0.0
    prev_dir = entry_direction
    prev_steer = entry_steer
    for seg in path.segments:
        cost += seg.length * (1.0 if seg.direction > 0 else params.reverse_weight)
        if seg.direction != prev_dir:
            cost += params.switch_cost
        steer = seg.steer * math.atan(vehicle.wheelbase / path.turning_radius)
        cost += params.steer_cost * abs(steer)
        cost += params.steer_change_cost * abs(steer - prev_steer)
        prev_dir = seg.direction
        prev_steer = steer
    return cost


def analytic_expansion(node: Node, goal: Pose2D, layout: LotLayout,
                       vehicle: VehicleParams, params: PlannerParams,
                       probe: CollisionProbe | None = None):
    """Collision-free Reeds-Shepp connection node -> goal, if one exists.

    Candidate words are tried in order of penalized cost; the first whose
    dense sampling (half the grid resolution) stays collision-free wins.
    Returns (samples, penalized_cost, arc_length) or None.
    """
    if probe is None:
        probe = CollisionProbe(layout, vehicle)
    radius = planning_radius(vehicle, params)
    x, y, phi = rs._goal_in_start_frame(node.pose, goal, radius)
    if x * x + y * y < 1e-24 and abs(phi) < 1e-12:
        return ((), 0.0, 0.0)
    words = []
    for word in rs._candidate_words(x, y, phi):
        segs = tuple(rs.RSSegment(s, g, p * radius) for s, g, p in word)
        path = rs.RSPath(segs, radius, sum(sg.length for sg in segs))
        words.append((
            _rs_tail_cost(path, node.direction, node.steer, vehicle, params),
            tuple(word), path))
    words.sort(key=lambda w: (w[0], w[1]))
    step = 0.5 * params.xy_resolution
    for cost, _key, path in words:
        samples = rs.sample_path(path, node.pose, step)[1:]
        if not samples:
            continue
        xs = np.array([p.x for p, _ in samples])
        ys = np.array([p.y for p, _ in samples])
        yaws = np.array([p.yaw for p, _ in samples])
        if probe.poses_free(xs, ys, yaws).all():
            return (tuple(samples), cost, path.total_length)
    return None


def _node_key(pose: Pose2D, direction: int, params: PlannerParams) -> tuple:
    n_yaw = max(1, round(2.0 * math.pi / params.yaw_resolution))
    return (round(pose.x / params.xy_resolution),
            round(pose.y / params.xy_resolution),
            round(pose.yaw / params.yaw_resolution) % n_yaw,
            direction)


def _reconstruct(nodes: dict, node: Node, tail, tail_cost: float,
                 tail_length: float) -> PlannedPath:
    chain = []
    cur = node
    while cur is not None:
        chain.append(cur)
        cur = nodes.get(cur.parent_key) if cur.parent_key is not None else None
    chain.reverse()
    points: list[tuple[Pose2D, int]] = [(chain[0].pose, chain[0].direction)]
    for n in chain[1:]:
        points.extend(n.prim)
    points.extend(tail)
    if len(points) > 1:
        points[0] = (points[0][0], points[1][1])
    switches = tuple(i for i in range(1, len(points))
                     if points[i][1] != points[i - 1][1])
    return PlannedPath(points=tuple(points), switch_indices=switches,
                       cost=node.g + tail_cost, length=node.length + tail_length)


def plan(start: Pose2D, goal: Pose2D, layout: LotLayout,
         vehicle: VehicleParams = None,
         params: PlannerParams = PlannerParams()) -> PlannedPath:
    """Collision-free path from start to goal against the static world.

    Raises InvalidStart / InvalidGoal when an endpoint footprint collides,
    NoPathFound when the search exhausts its node budget or frontier.
    """
    from .vehicle import DEFAULT_VEHICLE
    if vehicle is None:
        vehicle = DEFAULT_VEHICLE
    probe = CollisionProbe(layout, vehicle)
    if not probe.pose_free(start.x, start.y, start.yaw):
        raise InvalidStart("start footprint collides with the static world")
    if not probe.pose_free(goal.x, goal.y, goal.yaw):
        raise InvalidGoal("goal footprint collides with the static world")

    if (math.hypot(goal.x - start.x, goal.y - start.y) <= params.goal_pos_tol
            and abs(angle_diff(goal.yaw, start.yaw)) <= params.goal_yaw_tol):
        return PlannedPath(points=((start, 1),), switch_indices=(),
                           cost=0.0, length=0.0)

    field = holonomic_distance_field(layout, goal, params.xy_resolution,
                                     vehicle, probe)
    radius = planning_radius(vehicle, params)
    rs_cache: dict[tuple, float] = {}

    def h_cheap(pose: Pose2D) -> float:
        return max(_field_value(field, pose.x, pose.y),
                   math.hypot(goal.x - pose.x, goal.y - pose.y))

    def h_rs(pose: Pose2D, key: tuple) -> float:
        ck = key[:3]
        v = rs_cache.get(ck)
        if v is None:
            v = rs.shortest_path_length(pose, goal, radius)
            rs_cache[ck] = v
        return v

    start_node = Node(pose=start, direction=1, steer=0.0, g=0.0, length=0.0)
    start_key = _node_key(start, 1, params)
    nodes = {start_key: start_node}
    g_best = {start_key: 0.0}
    closed: set[tuple] = set()
    h0 = max(h_cheap(start), h_rs(start, start_key), 1e-9)
    counter = 0
    # heap entries: (f, tiebreak, key, g_at_push, heuristic verified)
    heap = [(0.0 + h0, counter, start_key, 0.0, True)]
    pops = 0
    since_shot = params.analytic_period  # force an attempt on the first pop

    in_tol = lambda p: (math.hypot(goal.x - p.x, goal.y - p.y) <= params.goal_pos_tol
                        and abs(angle_diff(goal.yaw, p.yaw)) <= params.goal_yaw_tol)

    while heap:
        f, _, key, g_at_push, verified = heapq.heappop(heap)
        if key in closed or g_at_push > g_best.get(key, math.inf) + 1e-12:
            continue
        node = nodes[key]
        if not verified:
            h_full = max(h_cheap(node.pose), h_rs(node.pose, key))
            f_full = node.g + h_full
            if f_full > f + 1e-9:
                counter += 1
                heapq.heappush(heap, (f_full, counter, key, node.g, True))
                continue
        closed.add(key)
        pops += 1
        if pops > params.node_budget:
            raise NoPathFound(f"node budget exhausted ({params.node_budget})")

        if in_tol(node.pose):
            return _reconstruct(nodes, node, (), 0.0, 0.0)

        h_here = max(f - node.g, 0.0)
        period = max(1, min(params.analytic_period,
                            int(params.analytic_period * h_here / h0)))
        since_shot += 1
        if since_shot >= period:
            since_shot = 0
            shot = analytic_expansion(node, goal, layout, vehicle, params, probe)
            if shot is not None:
                tail, tail_cost, tail_len = shot
                return _reconstruct(nodes, node, tail, tail_cost, tail_len)

        for succ in expand_node(node, vehicle, params, probe):
            skey = _node_key(succ.pose, succ.direction, params)
            if skey in closed:
                continue
            if succ.g < g_best.get(skey, math.inf) - 1e-12:
                succ.parent_key = key
                nodes[skey] = succ
                g_best[skey] = succ.g
                counter += 1
                heapq.heappush(heap, (succ.g + h_cheap(succ.pose), counter,
                                      skey, succ.g, False))
    raise NoPathFound("open set exhausted")
