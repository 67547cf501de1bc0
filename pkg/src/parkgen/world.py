"""Parking-lot layouts, episode enumeration, pedestrians, collision checks.

Two lot geometries are provided: a reverse-in lot with two facing rows of
8 perpendicular slots across an aisle, and a roadside lot with 6 parallel
slots beside a lane. Every non-target slot is occupied by a parked vehicle
when a scenario is instantiated.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from .geometry import BoxSet, OrientedBox, normalize_angle
from .vehicle import (Gear, Pose2D, VehicleParams, VehicleState,
                      DEFAULT_VEHICLE, footprint_box)


class LotKind(str, Enum):
    REVERSE_IN = "reverse_in"
    PARALLEL = "parallel"


class SlotKind(str, Enum):
    PERPENDICULAR = "perpendicular"
    PARALLEL = "parallel"


class CollisionKind(str, Enum):
    CLEAR = "clear"
    STATIC_HIT = "static_hit"
    PEDESTRIAN_HIT = "pedestrian_hit"


class StartSamplingFailed(Exception):
    """No collision-free start pose found; the layout is malformed."""


@dataclass(frozen=True)
class LayoutParams:
    """Lot dimensions and pedestrian routing, all overridable via config."""

    perp_slot_width: float = 3.0
    perp_slot_depth: float = 6.0
    perp_slots_per_row: int = 8
    aisle_width: float = 7.0
    par_slot_length: float = 7.0
    par_slot_width: float = 2.5
    par_slot_count: int = 6
    lane_width: float = 4.0
    parked_length: float = 4.8
    parked_width: float = 2.0
    start_lon_range: float = 3.0      # [m], +/- along the aisle
    start_lat_range: float = 0.5      # [m], +/- across the aisle
    start_yaw_range: float = math.radians(10.0)
    ped_count: int = 2
    ped_speed: float = 1.2            # [m/s]
    ped_radius: float = 0.3           # [m]
    ped_route_offset: float = 4.5     # [m], crossing lines this far from the slot
    ped_edge_margin: float = 0.1      # [m], route inset from the drive-band edge


@dataclass(frozen=True)
class SlotSpec:
    """One parking slot; center.yaw points along the slot's depth axis.

    For perpendicular slots the yaw points from the aisle into the slot, so
    a backed-in vehicle heads the opposite way; for parallel slots it equals
    the lane direction.
    """

    id: int
    center: Pose2D
    width: float
    depth: float
    kind: SlotKind

    def box(self) -> OrientedBox:
        return OrientedBox(self.center.x, self.center.y, self.center.yaw,
                           self.depth, self.width)


@dataclass(frozen=True)
class LotLayout:
    kind: LotKind
    slots: tuple[SlotSpec, ...]
    static_obstacles: tuple[OrientedBox, ...]
    bounds: tuple[float, float, float, float]   # xmin, ymin, xmax, ymax
    aisle_entry: Pose2D
    aisle_span: tuple[float, float]             # y extent of the drive band
    _boxes: BoxSet = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "_boxes", BoxSet(self.static_obstacles))

    @property
    def obstacle_set(self) -> BoxSet:
        return self._boxes

    def in_bounds(self, corners: np.ndarray) -> bool:
        xmin, ymin, xmax, ymax = self.bounds
        return bool((corners[:, 0] >= xmin).all() and (corners[:, 0] <= xmax).all()
                    and (corners[:, 1] >= ymin).all() and (corners[:, 1] <= ymax).all())


@dataclass(frozen=True)
class PedestrianAgent:
    """Point agent shuttling along a cyclic polyline at constant speed."""

    waypoints: tuple[tuple[float, float], ...]
    speed: float
    radius: float
    seg_index: int = 0
    seg_dist: float = 0.0
    blocked_s: float = 0.0

    @property
    def position(self) -> tuple[float, float]:
        a = self.waypoints[self.seg_index]
        b = self.waypoints[(self.seg_index + 1) % len(self.waypoints)]
        seg_len = math.hypot(b[0] - a[0], b[1] - a[1])
        f = self.seg_dist / seg_len if seg_len > 0.0 else 0.0
        return a[0] + f * (b[0] - a[0]), a[1] + f * (b[1] - a[1])

    def reversed_route(self) -> "PedestrianAgent":
        """Same position, opposite travel direction along the cycle."""
        n = len(self.waypoints)
        lengths = _cycle_lengths(self.waypoints)
        j = (n - 2 - self.seg_index) % n
        return replace(self, waypoints=tuple(reversed(self.waypoints)),
                       seg_index=j,
                       seg_dist=lengths[self.seg_index] - self.seg_dist,
                       blocked_s=0.0)


@dataclass(frozen=True)
class ScenarioConfig:
    layout_kind: LotKind
    target_slot_id: int
    pedestrians: bool
    repetition: int
    seed: int


@dataclass(frozen=True)
class ScenarioInstance:
    config: ScenarioConfig
    layout: LotLayout
    start: VehicleState
    goal: Pose2D
    agents: tuple[PedestrianAgent, ...]


def build_layout(kind: LotKind, params: LayoutParams = LayoutParams()) -> LotLayout:
    """Base lot geometry (slots, bounds, entry pose); no parked vehicles yet."""
    if kind == LotKind.REVERSE_IN:
        n = params.perp_slots_per_row
        pitch = params.perp_slot_width
        half_aisle = 0.5 * params.aisle_width
        depth = params.perp_slot_depth
        xs = [(i - (n - 1) / 2.0) * pitch for i in range(n)]
        slots = []
        for i, x in enumerate(xs):           # bottom row, depth axis down
            slots.append(SlotSpec(i, Pose2D(x, -(half_aisle + 0.5 * depth),
                                            -0.5 * math.pi),
                                  pitch, depth, SlotKind.PERPENDICULAR))
        for i, x in enumerate(xs):           # top row, depth axis up
            slots.append(SlotSpec(n + i, Pose2D(x, half_aisle + 0.5 * depth,
                                                0.5 * math.pi),
                                  pitch, depth, SlotKind.PERPENDICULAR))
        row_half = 0.5 * n * pitch
        bounds = (-(row_half + 7.0), -(half_aisle + depth + 0.5),
                  row_half + 7.0, half_aisle + depth + 0.5)
        return LotLayout(kind=kind, slots=tuple(slots), static_obstacles=(),
                         bounds=bounds, aisle_entry=Pose2D(0.0, 0.0, 0.0),
                         aisle_span=(-half_aisle, half_aisle))

    n = params.par_slot_count
    pitch = params.par_slot_length
    xs = [(i - (n - 1) / 2.0) * pitch for i in range(n)]
    slots = [SlotSpec(i, Pose2D(x, -0.5 * params.par_slot_width, 0.0),
                      params.par_slot_width, pitch, SlotKind.PARALLEL)
             for i, x in enumerate(xs)]
    row_half = 0.5 * n * pitch
    bounds = (-(row_half + 4.0), -(params.par_slot_width + 0.5),
              row_half + 4.0, params.lane_width + 1.0)
    return LotLayout(kind=kind, slots=tuple(slots), static_obstacles=(),
                     bounds=bounds,
                     aisle_entry=Pose2D(0.0, 0.5 * params.lane_width, 0.0),
                     aisle_span=(0.0, params.lane_width))


def occupied_layout(layout: LotLayout, target_slot_id: int,
                    params: LayoutParams = LayoutParams()) -> LotLayout:
    """Layout with a parked vehicle centered in every non-target slot."""
    parked = tuple(OrientedBox(s.center.x, s.center.y, s.center.yaw,
                               params.parked_length, params.parked_width)
                   for s in layout.slots if s.id != target_slot_id)
    return replace(layout, static_obstacles=layout.static_obstacles + parked)


def mix_seed(master_seed: int, tag: str, *parts) -> int:
    """Stable 64-bit seed derived from the master seed and a part tuple."""
    h = hashlib.sha256()
    h.update(str(int(master_seed)).encode())
    h.update(tag.encode())
    for p in parts:
        h.update(b"|")
        h.update(str(p).encode())
    return int.from_bytes(h.digest()[:8], "big")


def enumerate_episodes(master_seed: int) -> list[ScenarioConfig]:
    """All generation episodes in deterministic order.

    Cross product of every slot in both lots, pedestrian condition, and 16
    repetitions; per-episode seeds are mixed from the master seed.
    """
    out = []
    for kind, n_slots in ((LotKind.REVERSE_IN, 16), (LotKind.PARALLEL, 6)):
        for slot in range(n_slots):
            for peds in (False, True):
                for rep in range(16):
                    seed = mix_seed(master_seed, "gen", kind.value, slot,
                                    int(peds), rep)
                    out.append(ScenarioConfig(kind, slot, peds, rep, seed))
    return out


def goal_pose(slot: SlotSpec, vehicle: VehicleParams = DEFAULT_VEHICLE) -> Pose2D:
    """Rear-axle goal with the body centered in the slot.

    Perpendicular slots are backed into (heading out toward the aisle);
    parallel slots keep the lane heading.
    """
    if slot.kind == SlotKind.PERPENDICULAR:
        heading = normalize_angle(slot.center.yaw + math.pi)
    else:
        heading = slot.center.yaw
    d = vehicle.center_offset
    return Pose2D(slot.center.x - d * math.cos(heading),
                  slot.center.y - d * math.sin(heading), heading)


def sample_start_pose(layout: LotLayout, slot: SlotSpec, rng,
                      vehicle: VehicleParams = DEFAULT_VEHICLE,
                      params: LayoutParams = LayoutParams()) -> VehicleState:
    """Randomized entry state in the aisle abeam the target slot.

    The nominal pose is the aisle entry projected along the aisle to the
    point nearest the slot; draws are rejected until the footprint clears
    all static obstacles.
    """
    entry = layout.aisle_entry
    c, s = math.cos(entry.yaw), math.sin(entry.yaw)
    t = (slot.center.x - entry.x) * c + (slot.center.y - entry.y) * s
    nominal = (entry.x + t * c, entry.y + t * s)
    for _ in range(100):
        lon = rng.uniform(-params.start_lon_range, params.start_lon_range)
        lat = rng.uniform(-params.start_lat_range, params.start_lat_range)
        dyaw = rng.uniform(-params.start_yaw_range, params.start_yaw_range)
        pose = Pose2D(nominal[0] + lon * c - lat * s,
                      nominal[1] + lon * s + lat * c,
                      entry.yaw + dyaw)
        corners = footprint_box(pose, vehicle).corners()
        if layout.in_bounds(corners) and not layout.obstacle_set.any_hit(corners):
            return VehicleState(pose=pose, v=0.0, a=0.0, steer=0.0,
                                gear=Gear.FORWARD)
    raise StartSamplingFailed(
        f"no collision-free start near slot {slot.id} after 100 draws")


def spawn_pedestrians(layout: LotLayout, slot: SlotSpec, rng,
                      params: LayoutParams = LayoutParams(),
                      clear_of: OrientedBox | None = None) -> tuple[PedestrianAgent, ...]:
    """Two agents shuttling across the drive band near the target slot.

    Routes sit a few meters to either side of the slot so crossings happen
    where the vehicle approaches but not where it stops; spawn phases start
    at opposite route ends with a small seeded offset, shifted further
    along the route if that spot is inside the ego's personal space.
    """
    ylo, yhi = layout.aisle_span
    ylo += params.ped_edge_margin
    yhi -= params.ped_edge_margin
    agents = []
    for k in range(params.ped_count):
        side = -1.0 if k % 2 == 0 else 1.0
        rx = slot.center.x + side * params.ped_route_offset
        if k % 2 == 0:
            waypoints = ((rx, ylo), (rx, yhi))
        else:
            waypoints = ((rx, yhi), (rx, ylo))
        phase = rng.uniform(0.0, params.ped_phase_jitter)
        agent = PedestrianAgent(waypoints=waypoints, speed=params.ped_speed,
                                radius=params.ped_radius,
                                seg_index=0, seg_dist=phase)
        if clear_of is not None:
            for _ in range(40):
                px, py = agent.position
                if (clear_of.distance_to_point(px, py)
                        > agent.radius + PED_CLEARANCE):
                    break
                agent = step_pedestrian(agent, 0.5 / agent.speed)
        agents.append(agent)
    return tuple(agents)


def _cycle_lengths(waypoints) -> list[float]:
    n = len(waypoints)
    return [math.hypot(waypoints[(i + 1) % n][0] - waypoints[i][0],
                       waypoints[(i + 1) % n][1] - waypoints[i][1])
            for i in range(n)]


PED_CLEARANCE = 0.35   # [m] personal space kept from the ego body


def step_pedestrian(agent: PedestrianAgent, dt: float) -> PedestrianAgent:
    """Advance one agent speed*dt along its cyclic route."""
    if dt < 0.0:
        raise ValueError("dt must be non-negative")
    lengths = _cycle_lengths(agent.waypoints)
    idx = agent.seg_index
    dist = agent.seg_dist + agent.speed * dt
    while dist >= lengths[idx] and sum(lengths) > 0.0:
        dist -= lengths[idx]
        idx = (idx + 1) % len(agent.waypoints)
    return replace(agent, seg_index=idx, seg_dist=dist)


PED_GIVE_UP_S = 2.0    # [s] blocked time before an agent turns around


def step_pedestrians(agents, dt: float,
                     avoid: OrientedBox | None = None) -> tuple[PedestrianAgent, ...]:
    """Advance agents along their routes.

    With an ego body box given, an agent pauses instead of stepping closer
    than its personal space to the box, and turns around after being
    blocked for a couple of seconds; steps that increase the separation
    are always allowed so agents walk clear again.
    """
    out = []
    for a in agents:
        nxt = step_pedestrian(a, dt)
        if avoid is not None:
            px, py = nxt.position
            new_d = avoid.distance_to_point(px, py)
            if new_d <= a.radius + PED_CLEARANCE:
                cx, cy = a.position
                if new_d < avoid.distance_to_point(cx, cy):
                    blocked = a.blocked_s + dt
                    nxt = (a.reversed_route() if blocked >= PED_GIVE_UP_S
                           else replace(a, blocked_s=blocked))
            elif nxt.blocked_s:
                nxt = replace(nxt, blocked_s=0.0)
        out.append(nxt)
    return tuple(out)


def check_collision(corners: np.ndarray, layout: LotLayout,
                    agents=()) -> CollisionKind:
    """Classify a footprint against the static world, then pedestrians."""
    if not layout.in_bounds(corners) or layout.obstacle_set.any_hit(corners):
        return CollisionKind.STATIC_HIT
    if agents:
        fx = 0.25 * corners[:, 0].sum()
        fy = 0.25 * corners[:, 1].sum()
        e0 = corners[1] - corners[0]
        e1 = corners[3] - corners[0]
        length = float(np.linalg.norm(e0))
        width = float(np.linalg.norm(e1))
        yaw = math.atan2(e0[1], e0[0])
        box = OrientedBox(fx, fy, yaw, length, width)
        for a in agents:
            px, py = a.position
            if box.distance_to_point(px, py) <= a.radius:
                return CollisionKind.PEDESTRIAN_HIT
    return CollisionKind.CLEAR


def build_scenario(config: ScenarioConfig,
                   vehicle: VehicleParams = DEFAULT_VEHICLE,
                   params: LayoutParams = LayoutParams()) -> ScenarioInstance:
    """Fully instantiated episode: occupied layout, start, goal, agents."""
    base = build_layout(config.layout_kind, params)
    slot = base.slots[config.target_slot_id]
    layout = occupied_layout(base, config.target_slot_id, params)
    rng = np.random.default_rng(config.seed)
    start = sample_start_pose(layout, slot, rng, vehicle, params)
    agents = ()
    if config.pedestrians:
        agents = spawn_pedestrians(layout, slot, rng, params,
                                   clear_of=footprint_box(start.pose, vehicle))
    return ScenarioInstance(config=config, layout=layout, start=start,
                            goal=goal_pose(slot, vehicle), agents=agents)
