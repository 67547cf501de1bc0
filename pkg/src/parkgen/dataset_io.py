"""Per-frame records, semantic BEV rasterization, and episode serialization.

On-disk episode layout (all byte-deterministic):

    epNNNN/
      meta.json       episode header: config, outcome, errors, counts
      frames.jsonl    one frame per line, fixed key order, repr-exact floats
      bev/000000.pgm  one raster per logged frame

Raster files are binary 8-bit single-channel PGM with the exact header
``P5 <width> <height> 255\\n`` followed by row-major class codes.
"""

from __future__ import annotations

import json
import math
import os
import shutil
from dataclasses import dataclass, asdict
from enum import IntEnum
from pathlib import Path

import numpy as np

from .geometry import OrientedBox
from .vehicle import Gear, Pose2D, VehicleParams, VehicleState
from .world import (LotKind, LotLayout, ScenarioConfig, SlotSpec,
                    build_layout, occupied_layout)

SCHEMA_VERSION = "1"

FRAME_FIELDS = ("t", "x", "y", "yaw", "v", "a", "steer", "throttle", "brake",
                "steer_norm", "reverse", "gear", "pedestrians",
                "target_slot_id", "bev_file")


class BevClass(IntEnum):
    FREE = 0
    MARKING = 1
    STATIC_VEHICLE = 2
    PEDESTRIAN = 3
    TARGET_SLOT = 4
    EGO = 5


@dataclass(frozen=True)
class BevSpec:
    cells: int = 200
    cell_size: float = 0.1     # [m]
    marking_halfwidth: float = 0.06  # [m], painted line half thickness


@dataclass(frozen=True)
class FrameRecord:
    t: float
    x: float
    y: float
    yaw: float
    v: float
    a: float                 # commanded acceleration
    steer: float
    throttle: float
    brake: float
    steer_norm: float
    reverse: bool
    gear: int
    pedestrians: tuple[tuple[float, float], ...]
    target_slot_id: int
    bev_file: str


class SchemaMismatch(Exception):
    pass


class CorruptFrame(Exception):
    pass


# ---------------------------------------------------------------------------
# BEV rasterization

_grid_cache: dict[tuple[int, float], tuple[np.ndarray, np.ndarray]] = {}


def _cell_axes(spec: BevSpec) -> tuple[np.ndarray, np.ndarray]:
    key = (spec.cells, spec.cell_size)
    got = _grid_cache.get(key)
    if got is None:
        half = spec.cells / 2.0
        fwd = (half - np.arange(spec.cells) - 0.5) * spec.cell_size   # rows
        left = (half - np.arange(spec.cells) - 0.5) * spec.cell_size  # cols
        got = (fwd, left)
        _grid_cache[key] = got
    return got


def _paint_box(grid, spec, ego: Pose2D, box: OrientedBox, code: int,
               grow: float = 0.0, ring: float | None = None) -> None:
    """Fill (or outline, when ring is set) one rectangle in ego-frame cells."""
    fwd, left = _cell_axes(spec)
    ce, se = math.cos(ego.yaw), math.sin(ego.yaw)
    dx, dy = box.cx - ego.x, box.cy - ego.y
    cf = dx * ce + dy * se          # box center, ego-forward coordinate
    cl = -dx * se + dy * ce         # box center, ego-left coordinate
    reach = box.bounding_radius + grow + (ring or 0.0)
    half_span = spec.cells / 2.0 * spec.cell_size
    if (abs(cf) > half_span + reach) or (abs(cl) > half_span + reach):
        return
    r0 = max(0, int((half_span - (cf + reach)) / spec.cell_size))
    r1 = min(spec.cells, int((half_span - (cf - reach)) / spec.cell_size) + 1)
    c0 = max(0, int((half_span - (cl + reach)) / spec.cell_size))
    c1 = min(spec.cells, int((half_span - (cl - reach)) / spec.cell_size) + 1)
    if r0 >= r1 or c0 >= c1:
        return
    rel = box.yaw - ego.yaw
    cb, sb = math.cos(rel), math.sin(rel)
    df = fwd[r0:r1, None] - cf
    dl = left[None, c0:c1] - cl
    u = df * cb + dl * sb
    v = -df * sb + dl * cb
    hl, hw = 0.5 * box.length + grow, 0.5 * box.width + grow
    if ring is None:
        mask = (np.abs(u) <= hl) & (np.abs(v) <= hw)
    else:
        outer = (np.abs(u) <= hl + ring) & (np.abs(v) <= hw + ring)
        inner = (np.abs(u) <= hl - ring) & (np.abs(v) <= hw - ring)
        mask = outer & ~inner
    sub = grid[r0:r1, c0:c1]
    sub[mask] = code


def _paint_disc(grid, spec, ego: Pose2D, px: float, py: float, radius: float,
                code: int) -> None:
    fwd, left = _cell_axes(spec)
    ce, se = math.cos(ego.yaw), math.sin(ego.yaw)
    dx, dy = px - ego.x, py - ego.y
    cf = dx * ce + dy * se
    cl = -dx * se + dy * ce
    half_span = spec.cells / 2.0 * spec.cell_size
    if abs(cf) > half_span + radius or abs(cl) > half_span + radius:
        return
    r0 = max(0, int((half_span - (cf + radius)) / spec.cell_size))
    r1 = min(spec.cells, int((half_span - (cf - radius)) / spec.cell_size) + 1)
    c0 = max(0, int((half_span - (cl + radius)) / spec.cell_size))
    c1 = min(spec.cells, int((half_span - (cl - radius)) / spec.cell_size) + 1)
    if r0 >= r1 or c0 >= c1:
        return
    df = fwd[r0:r1, None] - cf
    dl = left[None, c0:c1] - cl
    mask = df * df + dl * dl <= radius * radius
    sub = grid[r0:r1, c0:c1]
    sub[mask] = code


def rasterize_bev(layout: LotLayout, state: VehicleState, agents,
                  target_slot: SlotSpec, spec: BevSpec = BevSpec(),
                  vehicle: VehicleParams | None = None) -> np.ndarray:
    """Ego-centric semantic class grid; ego heading points up (row 0).

    Classes are painted in ascending code order so higher codes overwrite
    lower ones. Every cell's class is decided from its world-frame center
    point, which makes the raster exactly invariant to rigid rotations of
    the whole scene.
    """
    from .vehicle import DEFAULT_VEHICLE, footprint_box
    if vehicle is None:
        vehicle = DEFAULT_VEHICLE
    grid = np.zeros((spec.cells, spec.cells), dtype=np.uint8)
    ego = state.pose
    lw = spec.marking_halfwidth
    for slot in layout.slots:
        _paint_box(grid, spec, ego, slot.box(), BevClass.MARKING, ring=lw)
    if layout.kind == LotKind.PARALLEL:
        xmin, _, xmax, _ = layout.bounds
        lane_edge = OrientedBox(0.5 * (xmin + xmax), layout.aisle_span[1],
                                0.0, xmax - xmin, 0.0)
        _paint_box(grid, spec, ego, lane_edge, BevClass.MARKING, ring=lw)
    for box in layout.static_obstacles:
        _paint_box(grid, spec, ego, box, BevClass.STATIC_VEHICLE)
    for agent in agents:
        px, py = agent.position
        _paint_disc(grid, spec, ego, px, py, agent.radius, BevClass.PEDESTRIAN)
    tbox = target_slot.box()
    _paint_box(grid, spec, ego, OrientedBox(tbox.cx, tbox.cy, tbox.yaw,
                                            tbox.length - 2 * lw,
                                            tbox.width - 2 * lw),
               BevClass.TARGET_SLOT)
    _paint_box(grid, spec, ego, footprint_box(ego, vehicle), BevClass.EGO)
    return grid


# ---------------------------------------------------------------------------
# PGM raster files

def write_pgm(path: Path, grid: np.ndarray) -> None:
    h, w = grid.shape
    with open(path, "wb") as f:
        f.write(f"P5 {w} {h} 255\n".encode("ascii"))
        f.write(np.ascontiguousarray(grid, dtype=np.uint8).tobytes())


def read_pgm(path: Path) -> np.ndarray:
    data = Path(path).read_bytes()
    nl = data.find(b"\n")
    if nl < 0:
        raise CorruptFrame(f"{path}: missing PGM header")
    fields = data[:nl].split()
    if len(fields) != 4 or fields[0] != b"P5":
        raise CorruptFrame(f"{path}: malformed PGM header")
    w, h = int(fields[1]), int(fields[2])
    body = data[nl + 1:]
    if len(body) != w * h:
        raise CorruptFrame(f"{path}: payload size mismatch")
    return np.frombuffer(body, dtype=np.uint8).reshape(h, w).copy()


# ---------------------------------------------------------------------------
# Episode serialization

def _frame_to_dict(fr: FrameRecord) -> dict:
    d = {}
    for k in FRAME_FIELDS:
        v = getattr(fr, k)
        if k == "pedestrians":
            v = [[p[0], p[1]] for p in v]
        d[k] = v
    return d


def _frame_from_dict(d: dict) -> FrameRecord:
    kw = {k: d[k] for k in FRAME_FIELDS}
    kw["pedestrians"] = tuple((p[0], p[1]) for p in kw["pedestrians"])
    return FrameRecord(**kw)


def _state_to_dict(s: VehicleState) -> dict:
    return {"x": s.pose.x, "y": s.pose.y, "yaw": s.pose.yaw, "v": s.v,
            "a": s.a, "steer": s.steer, "gear": int(s.gear)}


def _state_from_dict(d: dict) -> VehicleState:
    return VehicleState(pose=Pose2D(d["x"], d["y"], d["yaw"]), v=d["v"],
                        a=d["a"], steer=d["steer"], gear=Gear(d["gear"]))


def _config_to_dict(c: ScenarioConfig) -> dict:
    return {"layout_kind": c.layout_kind.value,
            "target_slot_id": c.target_slot_id,
            "pedestrians": c.pedestrians,
            "repetition": c.repetition,
            "seed": c.seed}


def _config_from_dict(d: dict) -> ScenarioConfig:
    return ScenarioConfig(layout_kind=LotKind(d["layout_kind"]),
                          target_slot_id=d["target_slot_id"],
                          pedestrians=d["pedestrians"],
                          repetition=d["repetition"], seed=d["seed"])


def write_episode(record, directory) -> dict:
    """Serialize one episode; returns its manifest entry.

    The directory is written atomically: content goes to a temporary
    sibling that is renamed into place, and any failure removes it.
    """
    directory = Path(directory)
    tmp = directory.with_name(directory.name + ".__tmp__")
    if tmp.exists():
        shutil.rmtree(tmp)
    try:
        (tmp / "bev").mkdir(parents=True)
        meta = {
            "schema_version": SCHEMA_VERSION,
            "config": _config_to_dict(record.config),
            "outcome": record.outcome.value,
            "duration_s": record.duration_s,
            "final_state": _state_to_dict(record.final_state),
            "final_pos_err": record.final_pos_err,
            "final_yaw_err": record.final_yaw_err,
            "hold_ticks": record.hold_ticks,
            "replans": record.replans,
            "collision_kind": record.collision_kind,
            "frame_count": len(record.frames),
        }
        with open(tmp / "meta.json", "w") as f:
            json.dump(meta, f, indent=2)
            f.write("\n")
        with open(tmp / "frames.jsonl", "w") as f:
            for fr in record.frames:
                f.write(json.dumps(_frame_to_dict(fr), separators=(",", ":")))
                f.write("\n")
        if len(record.bev_grids) != len(record.frames):
            raise CorruptFrame("raster count differs from frame count")
        for fr, grid in zip(record.frames, record.bev_grids):
            write_pgm(tmp / fr.bev_file, grid)
        if directory.exists():
            shutil.rmtree(directory)
        os.replace(tmp, directory)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    return {
        "directory": directory.name,
        "config": _config_to_dict(record.config),
        "outcome": record.outcome.value,
        "frame_count": len(record.frames),
        "duration_s": record.duration_s,
        "hold_ticks": record.hold_ticks,
        "collision_kind": record.collision_kind,
    }


def read_episode(directory):
    """Exact inverse of write_episode."""
    from .engine import EpisodeRecord, Outcome
    directory = Path(directory)
    try:
        meta = json.loads((directory / "meta.json").read_text())
    except FileNotFoundError as e:
        raise CorruptFrame(f"{directory}: missing meta.json") from e
    if meta.get("schema_version") != SCHEMA_VERSION:
        raise SchemaMismatch(
            f"schema {meta.get('schema_version')!r} != {SCHEMA_VERSION!r}")
    lines = (directory / "frames.jsonl").read_text().splitlines()
    if len(lines) != meta["frame_count"]:
        raise CorruptFrame(f"{directory}: frame log has {len(lines)} lines, "
                           f"meta says {meta['frame_count']}")
    frames = [_frame_from_dict(json.loads(ln)) for ln in lines]
    bev_files = sorted((directory / "bev").glob("*.pgm"))
    if len(bev_files) != meta["frame_count"]:
        raise CorruptFrame(f"{directory}: {len(bev_files)} rasters, "
                           f"meta says {meta['frame_count']}")
    grids = [read_pgm(directory / fr.bev_file) for fr in frames]
    return EpisodeRecord(
        config=_config_from_dict(meta["config"]),
        outcome=Outcome(meta["outcome"]),
        duration_s=meta["duration_s"],
        final_state=_state_from_dict(meta["final_state"]),
        final_pos_err=meta["final_pos_err"],
        final_yaw_err=meta["final_yaw_err"],
        frames=frames,
        bev_grids=grids,
        hold_ticks=meta["hold_ticks"],
        replans=meta["replans"],
        collision_kind=meta["collision_kind"],
    )


# ---------------------------------------------------------------------------
# Dataset manifest

def write_manifest(path, master_seed: int, entries: list[dict]) -> None:
    doc = {
        "schema_version": SCHEMA_VERSION,
        "master_seed": master_seed,
        "episode_count": len(entries),
        "episodes": entries,
    }
    path = Path(path)
    with open(path, "w") as f:
        json.dump(doc, f, indent=2)
        f.write("\n")


def read_manifest(path) -> dict:
    doc = json.loads(Path(path).read_text())
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise SchemaMismatch(
            f"schema {doc.get('schema_version')!r} != {SCHEMA_VERSION!r}")
    return doc


def verify_manifest(dataset_dir) -> dict:
    """Check manifest counts against the files on disk; returns the manifest."""
    dataset_dir = Path(dataset_dir)
    doc = read_manifest(dataset_dir / "manifest.json")
    episodes = doc["episodes"]
    if doc["episode_count"] != len(episodes):
        raise CorruptFrame("manifest episode_count mismatch")
    for entry in episodes:
        ep_dir = dataset_dir / "episodes" / entry["directory"]
        lines = (ep_dir / "frames.jsonl").read_text().splitlines()
        n_bev = len(list((ep_dir / "bev").glob("*.pgm")))
        if len(lines) != entry["frame_count"] or n_bev != entry["frame_count"]:
            raise CorruptFrame(f"{ep_dir}: on-disk frame count mismatch")
    return doc
