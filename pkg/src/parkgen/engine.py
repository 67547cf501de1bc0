"""Closed-loop execution of one scenario: plan once, track, gate, record.

The engine ticks at a fixed control rate, advances pedestrians, runs the
safety gate, computes the MPC command (or brakes while held), steps the
vehicle plant, checks collisions, and logs frames at the logging rate.
Everything is a pure function of the scenario instance, so a rerun with
the same seed reproduces the log byte for byte.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from .dataset_io import BevSpec, FrameRecord, rasterize_bev
from .geometry import OrientedBox, angle_diff
from .hybrid_astar import PlannerParams, PlanningError, plan
from .mpc import (MpcParams, QpNotConverged, RefTrajectory, SpeedProfile,
                  build_reference, control_step)
from .vehicle import (DEFAULT_VEHICLE, Gear, VehicleParams, VehicleState,
                      accel_to_pedals, body_center, footprint, footprint_box,
                      step_kinematics)
from .world import (CollisionKind, LotLayout, ScenarioInstance,
                    check_collision, step_pedestrians)

HOLD_BRAKE = 2.0   # [m/s^2] comfortable braking while gated


class Outcome(str, Enum):
    TARGET_SUCCESS = "target_success"
    TARGET_FAILURE = "target_failure"
    NON_TARGET = "non_target"
    COLLISION = "collision"
    TIMEOUT = "timeout"
    PLAN_FAILURE = "plan_failure"


class GateDecision(str, Enum):
    PROCEED = "proceed"
    HOLD = "hold"


@dataclass(frozen=True)
class EngineConfig:
    control_hz: int = 20
    log_hz: int = 10
    timeout_s: float = 60.0
    success_pos_tol: float = 0.5            # [m], body-center distance
    success_yaw_tol: float = math.radians(5.0)
    stop_speed: float = 0.05                # [m/s]
    dwell_s: float = 1.0
    ped_lookahead_s: float = 2.0
    ped_inflation: float = 0.3              # [m]
    blocked_replan_s: float = 5.0

    def __post_init__(self):
        if self.control_hz % self.log_hz != 0:
            raise ValueError("control_hz must be an integer multiple of log_hz")
        if self.timeout_s <= 0.0:
            raise ValueError("timeout_s must be positive")


@dataclass
class EpisodeRecord:
    config: object
    outcome: Outcome
    duration_s: float
    final_state: VehicleState
    final_pos_err: float
    final_yaw_err: float
    frames: list[FrameRecord] = field(default_factory=list)
    bev_grids: list[np.ndarray] = field(default_factory=list)
    hold_ticks: int = 0
    replans: int = 0
    collision_kind: str | None = None


def safety_gate(state: VehicleState, agents, ref: RefTrajectory,
                ref_index: int, config: EngineConfig,
                vehicle: VehicleParams) -> GateDecision:
    """Hold when a pedestrian disc is inside the upcoming swept corridor.

    The corridor is the vehicle footprint, inflated by ped_inflation, swept
    over the next ped_lookahead_s of the reference from ref_index.
    """
    if not agents:
        return GateDecision.PROCEED
    k_max = int(math.ceil(config.ped_lookahead_s / ref.dt))
    idx = np.clip(np.arange(ref_index, ref_index + k_max + 1), 0, len(ref) - 1)
    idx = np.unique(idx)
    d = vehicle.center_offset
    for i in idx:
        yaw = ref.yaw_unwrapped[i]
        box = OrientedBox(ref.xs[i] + d * math.cos(yaw),
                          ref.ys[i] + d * math.sin(yaw), yaw,
                          vehicle.body_length + 2 * config.ped_inflation,
                          vehicle.body_width + 2 * config.ped_inflation)
        for a in agents:
            px, py = a.position
            if box.distance_to_point(px, py) <= a.radius:
                return GateDecision.HOLD
    return GateDecision.PROCEED


def classify_outcome(final_state: VehicleState, instance: ScenarioInstance,
                     config: EngineConfig, collision_kind: str | None = None,
                     timed_out: bool = False,
                     vehicle: VehicleParams = DEFAULT_VEHICLE
                     ) -> tuple[Outcome, float, float]:
    """Episode outcome plus final (position, yaw) errors.

    Collision and timeout take priority; otherwise the body center decides
    between the target slot (within / out of tolerance), another slot, or
    nowhere (counted as a timeout-class failure).
    """
    slot = instance.layout.slots[instance.config.target_slot_id]
    cx, cy = body_center(final_state.pose, vehicle)
    gx, gy = body_center(instance.goal, vehicle)
    pos_err = math.hypot(cx - gx, cy - gy)
    yaw_err = abs(angle_diff(final_state.pose.yaw, instance.goal.yaw))
    if collision_kind:
        return Outcome.COLLISION, pos_err, yaw_err
    if timed_out:
        return Outcome.TIMEOUT, pos_err, yaw_err
    if slot.box().contains_point(cx, cy):
        if pos_err <= config.success_pos_tol and yaw_err <= config.success_yaw_tol:
            return Outcome.TARGET_SUCCESS, pos_err, yaw_err
        return Outcome.TARGET_FAILURE, pos_err, yaw_err
    for other in instance.layout.slots:
        if other.id != slot.id and other.box().contains_point(cx, cy):
            return Outcome.NON_TARGET, pos_err, yaw_err
    return Outcome.TIMEOUT, pos_err, yaw_err


def _agent_boxes(agents) -> tuple[OrientedBox, ...]:
    # bounding square of the disc itself; anything larger can overlap the
    # ego body when the agent is paused at its personal-space distance,
    # which would invalidate the replan start pose
    out = []
    for a in agents:
        px, py = a.position
        side = 2.0 * a.radius + 0.1
        out.append(OrientedBox(px, py, 0.0, side, side))
    return tuple(out)


def run_episode(instance: ScenarioInstance,
                planner_params: PlannerParams = PlannerParams(),
                mpc_params: MpcParams = MpcParams(),
                engine_config: EngineConfig = EngineConfig(),
                vehicle: VehicleParams = DEFAULT_VEHICLE,
                bev_spec: BevSpec = BevSpec(),
                profile: SpeedProfile = SpeedProfile(),
                record_bev: bool = True) -> EpisodeRecord:
    """Run one episode closed-loop and return its record."""
    cfg = engine_config
    layout = instance.layout
    target_slot = layout.slots[instance.config.target_slot_id]
    dt = 1.0 / cfg.control_hz
    log_every = cfg.control_hz // cfg.log_hz

    state = instance.start
    agents = tuple(instance.agents)
    frames: list[FrameRecord] = []
    grids: list[np.ndarray] = []

    def log_frame(t: float, accel: float, steer: float) -> None:
        cmd = accel_to_pedals(accel, steer, state.gear, vehicle)
        bev_file = f"bev/{len(frames):06d}.pgm"
        frames.append(FrameRecord(
            t=t, x=state.pose.x, y=state.pose.y, yaw=state.pose.yaw,
            v=state.v, a=accel, steer=steer, throttle=cmd.throttle,
            brake=cmd.brake, steer_norm=cmd.steer_norm, reverse=cmd.reverse,
            gear=int(state.gear), pedestrians=tuple(a.position for a in agents),
            target_slot_id=target_slot.id, bev_file=bev_file))
        if record_bev:
            grids.append(rasterize_bev(layout, state, agents, target_slot,
                                       bev_spec, vehicle))

    try:
        path = plan(state.pose, instance.goal, layout, vehicle, planner_params)
    except PlanningError:
        log_frame(0.0, 0.0, 0.0)
        _, pos_err, yaw_err = classify_outcome(state, instance, cfg,
                                               vehicle=vehicle)
        return EpisodeRecord(config=instance.config,
                             outcome=Outcome.PLAN_FAILURE, duration_s=0.0,
                             final_state=state, final_pos_err=pos_err,
                             final_yaw_err=yaw_err, frames=frames,
                             bev_grids=grids)

    ref = build_reference(path, vehicle, mpc_params, profile)
    boundaries = list(ref.segment_boundaries)
    ref_clock = 0.0
    ref_index = 0
    if len(ref) > 1:
        state = replace(state, gear=Gear(int(ref.dirs[1])))

    hold_ticks = 0
    hold_streak = 0
    streak_replanned = False
    replans = 0
    dwell = 0
    dwell_needed = int(round(cfg.dwell_s * cfg.control_hz))
    max_ticks = int(round(cfg.timeout_s * cfg.control_hz))
    outcome = None
    collision_kind = None
    duration = 0.0

    for tick in range(max_ticks):
        t = tick * dt
        if agents:
            agents = step_pedestrians(agents, dt,
                                      avoid=footprint_box(state.pose, vehicle))
        decision = safety_gate(state, agents, ref, ref_index, cfg, vehicle)
        if decision == GateDecision.HOLD:
            hold_ticks += 1
            hold_streak += 1
            accel = max(-HOLD_BRAKE, min(HOLD_BRAKE, -state.v / dt))
            steer = state.steer
            if hold_streak * dt > cfg.blocked_replan_s and not streak_replanned:
                streak_replanned = True
                ped_layout = replace(
                    layout, static_obstacles=layout.static_obstacles
                    + _agent_boxes(agents))
                try:
                    path = plan(state.pose, instance.goal, ped_layout,
                                vehicle, planner_params)
                    ref = build_reference(path, vehicle, mpc_params, profile)
                    boundaries = list(ref.segment_boundaries)
                    ref_clock = 0.0
                    ref_index = 0
                    replans += 1
                    if len(ref) > 1:
                        state = replace(state, gear=Gear(int(ref.dirs[1])))
                except PlanningError:
                    pass
        else:
            hold_streak = 0
            streak_replanned = False
            # advance the reference cursor, pausing at direction switches
            # until the vehicle has actually stopped
            next_clock = ref_clock + dt
            next_index = min(int(next_clock / ref.dt + 1e-9), len(ref) - 1)
            if boundaries and next_index >= boundaries[0]:
                b = boundaries[0]
                if abs(state.v) >= cfg.stop_speed:
                    next_index = b
                    next_clock = min(next_clock, b * ref.dt)
                else:
                    boundaries.pop(0)
                    if b + 1 < len(ref):
                        state = replace(state, gear=Gear(int(ref.dirs[b + 1])))
            ref_clock = next_clock
            ref_index = next_index
            try:
                accel, steer, _ = control_step(state, ref, ref_index,
                                               vehicle, mpc_params)
            except QpNotConverged:
                accel = max(-HOLD_BRAKE, min(HOLD_BRAKE, -state.v / dt))
                steer = state.steer

        if tick % log_every == 0:
            log_frame(t, accel, steer)

        state = step_kinematics(state, accel, steer, dt, vehicle)
        duration = (tick + 1) * dt

        hit = check_collision(footprint(state, vehicle), layout, agents)
        if hit != CollisionKind.CLEAR:
            outcome = Outcome.COLLISION
            collision_kind = hit.value
            break

        cx, cy = body_center(state.pose, vehicle)
        gx, gy = body_center(instance.goal, vehicle)
        in_tol = (math.hypot(cx - gx, cy - gy) <= cfg.success_pos_tol
                  and abs(angle_diff(state.pose.yaw, instance.goal.yaw))
                  <= cfg.success_yaw_tol)
        ref_done = ref_index >= len(ref) - 1
        if abs(state.v) < cfg.stop_speed and (in_tol or ref_done):
            dwell += 1
            if dwell >= dwell_needed:
                outcome, _, _ = classify_outcome(state, instance, cfg,
                                                 vehicle=vehicle)
                break
        else:
            dwell = 0

    timed_out = outcome is None
    outcome_final, pos_err, yaw_err = classify_outcome(
        state, instance, cfg, collision_kind=collision_kind,
        timed_out=timed_out, vehicle=vehicle)
    if timed_out:
        duration = cfg.timeout_s
    return EpisodeRecord(config=instance.config, outcome=outcome_final,
                         duration_s=duration, final_state=state,
                         final_pos_err=pos_err, final_yaw_err=yaw_err,
                         frames=frames, bev_grids=grids,
                         hold_ticks=hold_ticks, replans=replans,
                         collision_kind=collision_kind)


