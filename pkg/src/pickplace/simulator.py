"""Deterministic 2.5-D tabletop world with teleport pick-and-place dynamics.

Objects are rigid colored primitives on a plane.  Rendering and support
resolution share one rasterizer: an object placed somewhere rests on the
highest surface beneath its footprint, and the observation paints parts
bottom-up so higher surfaces win.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from importlib import resources

import numpy as np
import yaml

from .geometry import (DEFAULT_FRAME, GeometryError, Observation, PixelAction,
                       WorkspaceFrame)


class SimulatorError(ValueError):
    """Configuration error for unknown tasks or malformed scenes."""


def _load_palette() -> dict:
    with resources.files("pickplace.data").joinpath("palette.yaml").open() as f:
        return yaml.safe_load(f)


_PALETTE = _load_palette()
COLORS: dict[str, tuple[int, int, int]] = {k: tuple(v) for k, v in _PALETTE["colors"].items()}
FIXTURES: dict[str, tuple[int, int, int]] = {k: tuple(v) for k, v in _PALETTE["fixtures"].items()}
SEEN_ONLY_COLORS: list[str] = list(_PALETTE["splits"]["seen_only"])
UNSEEN_ONLY_COLORS: list[str] = list(_PALETTE["splits"]["unseen_only"])
OVERLAP_COLORS: list[str] = list(_PALETTE["splits"]["overlap"])
TABLE_RGB = FIXTURES["table"]


def split_colors(split: str) -> list[str]:
    if split == "seen":
        return SEEN_ONLY_COLORS + OVERLAP_COLORS
    if split == "unseen":
        return UNSEEN_ONLY_COLORS + OVERLAP_COLORS
    raise SimulatorError(f"unknown split {split!r} (expected 'seen' or 'unseen')")


@dataclass
class Part:
    """One paintable/supporting piece of an object, in object-local frame."""

    kind: str                      # rect | disk | ring
    offset: tuple[float, float]    # local (x, y) center
    dims: tuple                    # rect: (l, w); disk: (r,); ring: (r_in, r_out)
    top: float                     # surface height above object z
    rgb: tuple[int, int, int] | None = None  # None -> object color


@dataclass
class SceneObject:
    id: int
    shape: str                     # block | bowl | box | ring | peg_base | stand
    color: str
    size: tuple[float, float, float]
    pose: tuple[float, float, float, float]   # x, y, z, yaw
    graspable: bool = True
    container: bool = False
    size_rank: int | None = None   # rings: 0 small < 1 medium < 2 big
    symmetry: float | None = None  # yaw-match modulus; None -> yaw irrelevant
    parts: list[Part] = field(default_factory=list)

    @property
    def top(self) -> float:
        return self.pose[2] + max(p.top for p in self.parts)

    def rgb(self) -> tuple[int, int, int]:
        return COLORS.get(self.color, FIXTURES.get(self.color, TABLE_RGB))


def make_block(oid: int, color: str, side: float, pose) -> SceneObject:
    return SceneObject(
        id=oid, shape="block", color=color, size=(side, side, side), pose=tuple(pose),
        symmetry=math.pi / 2,
        parts=[Part("rect", (0.0, 0.0), (side, side), side)])


def make_box(oid: int, color: str, size, pose) -> SceneObject:
    l, w, h = size
    return SceneObject(
        id=oid, shape="box", color=color, size=(l, w, h), pose=tuple(pose),
        symmetry=math.pi,
        parts=[Part("rect", (0.0, 0.0), (l, w), h)])


BOWL_RIM_FRAC = 0.72
BOWL_BASE_H = 0.005


def make_bowl(oid: int, color: str, radius: float, pose) -> SceneObject:
    h = 0.025
    return SceneObject(
        id=oid, shape="bowl", color=color, size=(2 * radius, 2 * radius, h),
        pose=tuple(pose), graspable=False, container=True, symmetry=None,
        parts=[Part("disk", (0.0, 0.0), (radius,), BOWL_BASE_H, FIXTURES["bowl_interior"]),
               Part("ring", (0.0, 0.0), (BOWL_RIM_FRAC * radius, radius), h)])


def make_ring(oid: int, color: str, r_in: float, r_out: float, h: float,
              rank: int, pose) -> SceneObject:
    return SceneObject(
        id=oid, shape="ring", color=color, size=(2 * r_out, 2 * r_out, h),
        pose=tuple(pose), size_rank=rank, symmetry=None,
        parts=[Part("ring", (0.0, 0.0), (r_in, r_out), h)])


PEG_OFFSETS = (-0.08, 0.0, 0.08)
PEG_RADIUS = 0.012
PEG_SHADES = ("lighter_brown", "middle_brown", "darker_brown")


def make_peg_base(oid: int, pose) -> SceneObject:
    l, w, board_h, peg_h = 0.24, 0.10, 0.01, 0.012
    parts = [Part("rect", (0.0, 0.0), (l, w), board_h, FIXTURES["middle_brown"])]
    for off, shade in zip(PEG_OFFSETS, PEG_SHADES):
        parts.append(Part("disk", (off, 0.0), (PEG_RADIUS,), board_h + peg_h,
                          FIXTURES[shade]))
    return SceneObject(
        id=oid, shape="peg_base", color="brown", size=(l, w, board_h + peg_h),
        pose=tuple(pose), graspable=False, container=True, symmetry=None, parts=parts)


STAND_CELL_OFFSETS = (-0.05, 0.0, 0.05)
STAND_SHADES = ("lighter_brown", "middle_brown", "darker_brown")


def make_stand(oid: int, pose) -> SceneObject:
    l, w, h = 0.15, 0.06, 0.01
    parts = [Part("rect", (off, 0.0), (l / 3, w), h, FIXTURES[shade])
             for off, shade in zip(STAND_CELL_OFFSETS, STAND_SHADES)]
    return SceneObject(
        id=oid, shape="stand", color="brown", size=(l, w, h), pose=tuple(pose),
        graspable=False, container=True, symmetry=None, parts=parts)


def make_pallet(oid: int, size, pose) -> SceneObject:
    l, w = size
    h = 0.008
    return SceneObject(
        id=oid, shape="box", color="brown", size=(l, w, h), pose=tuple(pose),
        graspable=False, container=True, symmetry=math.pi,
        parts=[Part("rect", (0.0, 0.0), (l, w), h)])


@dataclass
class SceneState:
    objects: list[SceneObject]
    seed: int
    steps: int = 0
    parent: dict[int, int | None] = field(default_factory=dict)

    def by_id(self, oid: int) -> SceneObject:
        for o in self.objects:
            if o.id == oid:
                return o
        raise SimulatorError(f"no object with id {oid}")

    def children_of(self, oid: int) -> list[SceneObject]:
        return [o for o in self.objects if self.parent.get(o.id) == oid]


# ---------------------------------------------------------------------------
# Rasterization

def _pixel_centers(frame: WorkspaceFrame) -> tuple[np.ndarray, np.ndarray]:
    xs = frame.x_min + (np.arange(frame.height, dtype=np.float64) + 0.5) * frame.pixel_size
    ys = frame.y_min + (np.arange(frame.width, dtype=np.float64) + 0.5) * frame.pixel_size
    return np.meshgrid(xs, ys, indexing="ij")


_GRID_CACHE: dict[tuple, tuple[np.ndarray, np.ndarray]] = {}


def _grids(frame: WorkspaceFrame) -> tuple[np.ndarray, np.ndarray]:
    key = (frame.x_min, frame.x_max, frame.y_min, frame.y_max, frame.pixel_size)
    if key not in _GRID_CACHE:
        _GRID_CACHE[key] = _pixel_centers(frame)
    return _GRID_CACHE[key]


def _part_mask(frame: WorkspaceFrame, obj: SceneObject, part: Part) -> np.ndarray:
    x, y, _, yaw = obj.pose
    ox, oy = part.offset
    cos_y, sin_y = math.cos(yaw), math.sin(yaw)
    px = x + cos_y * ox - sin_y * oy
    py = y + sin_y * ox + cos_y * oy
    gx, gy = _grids(frame)
    dx, dy = gx - px, gy - py
    if part.kind == "rect":
        l, w = part.dims
        lx = cos_y * dx + sin_y * dy
        ly = -sin_y * dx + cos_y * dy
        return (np.abs(lx) <= l / 2) & (np.abs(ly) <= w / 2)
    if part.kind == "disk":
        (r,) = part.dims
        return dx * dx + dy * dy <= r * r
    if part.kind == "ring":
        r_in, r_out = part.dims
        d2 = dx * dx + dy * dy
        return (d2 <= r_out * r_out) & (d2 >= r_in * r_in)
    raise SimulatorError(f"unknown part kind {part.kind!r}")


def footprint_mask(frame: WorkspaceFrame, obj: SceneObject) -> np.ndarray:
    mask = np.zeros((frame.height, frame.width), dtype=bool)
    for part in obj.parts:
        mask |= _part_mask(frame, obj, part)
    return mask


def render_height(state: SceneState, frame: WorkspaceFrame,
                  exclude: set[int] | None = None) -> np.ndarray:
    height = np.zeros((frame.height, frame.width), dtype=np.float64)
    for obj in state.objects:
        if exclude and obj.id in exclude:
            continue
        for part in obj.parts:
            mask = _part_mask(frame, obj, part)
            top = obj.pose[2] + part.top
            height[mask] = np.maximum(height[mask], top)
    return height


def render_observation(state: SceneState, frame: WorkspaceFrame | None = None) -> Observation:
    """Top-down painter's rasterization: parts painted bottom-up by surface height."""
    frame = frame or DEFAULT_FRAME
    h, w = frame.height, frame.width
    color = np.empty((h, w, 3), dtype=np.float32)
    color[:] = np.array(TABLE_RGB, dtype=np.float32) / 255.0
    height = np.zeros((h, w), dtype=np.float32)
    pieces = []
    for obj in state.objects:
        for idx, part in enumerate(obj.parts):
            pieces.append((obj.pose[2] + part.top, obj.id, idx, obj, part))
    pieces.sort(key=lambda t: (t[0], t[1], t[2]))
    for top, _, _, obj, part in pieces:
        mask = _part_mask(frame, obj, part)
        rgb = part.rgb if part.rgb is not None else obj.rgb()
        color[mask] = np.array(rgb, dtype=np.float32) / 255.0
        height[mask] = np.float32(top - frame.z_min)
    return Observation(color=color, height=height, frame=frame)


# ---------------------------------------------------------------------------
# Dynamics

def _support_under(state: SceneState, frame: WorkspaceFrame, obj: SceneObject,
                   exclude: set[int]) -> tuple[float, int | None]:
    """Resting height and supporting object id for obj at its current (x, y)."""
    mask = footprint_mask(frame, obj)
    if not mask.any():
        return 0.0, None
    exclude = exclude | {obj.id}
    best_z, best_id = 0.0, None
    for other in state.objects:
        if other.id in exclude:
            continue
        for part in other.parts:
            pm = _part_mask(frame, other, part)
            if not (pm & mask).any():
                continue
            top = other.pose[2] + part.top
            if top > best_z or (top == best_z and best_id is not None and other.id < best_id):
                best_z, best_id = top, other.id
    return best_z, best_id


def settle(state: SceneState, frame: WorkspaceFrame, obj: SceneObject,
           exclude: set[int] | None = None) -> None:
    """Drop obj onto the highest surface beneath it and update the support graph."""
    z, support_id = _support_under(state, frame, obj, exclude or set())
    x, y, _, yaw = obj.pose
    obj.pose = (x, y, z, yaw)
    state.parent[obj.id] = support_id


def _resettle_children(state: SceneState, frame: WorkspaceFrame, oid: int,
                       moving: set[int]) -> None:
    children = sorted(state.children_of(oid), key=lambda o: (o.pose[2], o.id))
    for child in children:
        _resettle_children(state, frame, child.id, moving)
    for child in children:
        settle(state, frame, child, exclude=moving)


def topmost_graspable_at(state: SceneState, frame: WorkspaceFrame,
                         x: float, y: float) -> SceneObject | None:
    best = None
    best_top = -1.0
    gx, gy = x, y
    for obj in state.objects:
        if not obj.graspable:
            continue
        for part in obj.parts:
            ox, oy = part.offset
            yaw = obj.pose[3]
            cos_y, sin_y = math.cos(yaw), math.sin(yaw)
            px = obj.pose[0] + cos_y * ox - sin_y * oy
            py = obj.pose[1] + sin_y * ox + cos_y * oy
            dx, dy = gx - px, gy - py
            if part.kind == "rect":
                l, w = part.dims
                lx = cos_y * dx + sin_y * dy
                ly = -sin_y * dx + cos_y * dy
                inside = abs(lx) <= l / 2 and abs(ly) <= w / 2
            elif part.kind == "disk":
                inside = dx * dx + dy * dy <= part.dims[0] ** 2
            else:
                d2 = dx * dx + dy * dy
                inside = part.dims[0] ** 2 <= d2 <= part.dims[1] ** 2
            if inside:
                top = obj.pose[2] + part.top
                if top > best_top or (top == best_top and best and obj.id < best.id):
                    best, best_top = obj, top
    return best


def apply_pick_place(state: SceneState, action: PixelAction,
                     frame: WorkspaceFrame | None = None) -> tuple[SceneState, int | None]:
    """Teleport-style pick and place; a miss is a legal no-op step."""
    frame = frame or DEFAULT_FRAME
    for pose in (action.pick, action.place):
        if not (0 <= pose.u < frame.height and 0 <= pose.v < frame.width):
            raise GeometryError(f"action pixel ({pose.u}, {pose.v}) outside frame")
    state.steps += 1
    px = frame.x_min + (action.pick.u + 0.5) * frame.pixel_size
    py = frame.y_min + (action.pick.v + 0.5) * frame.pixel_size
    obj = topmost_graspable_at(state, frame, px, py)
    if obj is None:
        return state, None
    # Object leaves its stack; anything it carried drops first.
    state.parent[obj.id] = None
    _resettle_children(state, frame, obj.id, moving={obj.id})
    nx = frame.x_min + (action.place.u + 0.5) * frame.pixel_size
    ny = frame.y_min + (action.place.v + 0.5) * frame.pixel_size
    dyaw = action.place.angle - action.pick.angle
    yaw = (obj.pose[3] + dyaw) % (2.0 * math.pi)
    obj.pose = (nx, ny, obj.pose[2], yaw)
    settle(state, frame, obj)
    return state, obj.id


def reset(task: str, split: str, seed: int,
          frame: WorkspaceFrame | None = None):
    """Sample a task instance and render its first observation.

    Returns (state, observation, goal); the goal carries the instruction(s).
    """
    from . import tasks as _tasks

    frame = frame or DEFAULT_FRAME
    task_impl = _tasks.get_task(task)
    state, goal = task_impl.sample_instance(split, seed, frame)
    obs = render_observation(state, frame)
    return state, obs, goal
