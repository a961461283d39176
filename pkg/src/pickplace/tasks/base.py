"""Shared task machinery: goal state, pose sampling, pose matching."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from importlib import resources

import numpy as np
import yaml

from ..geometry import PixelAction, PixelPose, WorkspaceFrame, nearest_bin, world_to_pixel
from ..simulator import SceneState, SimulatorError

PLACE_ROTATIONS = 36
POSITION_TOL_PX = 1.5


def load_task_config() -> dict:
    with resources.files("pickplace.data").joinpath("tasks.yaml").open() as f:
        return yaml.safe_load(f)


TASK_CONFIG = load_task_config()


@dataclass
class GoalState:
    """Per-instance goal description plus episode bookkeeping."""

    task: str
    split: str
    seed: int
    max_steps: int
    schedule_len: int
    progress: int = 0
    attribute_colors: list[str] = field(default_factory=list)

    def instructions_so_far(self):  # pragma: no cover - overridden where used
        raise NotImplementedError


@dataclass
class TaskSpec:
    name: str
    instruction_mode: str
    nominal_steps: int
    metric: str
    seen_colors: list[str]
    unseen_colors: list[str]


class Task:
    """Base class: sampling, expert, scoring, and instruction rendering."""

    name: str = ""

    def __init__(self):
        self.cfg = TASK_CONFIG[self.name]

    @property
    def spec(self) -> TaskSpec:
        from ..simulator import split_colors
        return TaskSpec(
            name=self.name,
            instruction_mode=self.cfg["instruction_mode"],
            nominal_steps=int(self.cfg["nominal_steps"]),
            metric=self.cfg["metric"],
            seen_colors=split_colors("seen"),
            unseen_colors=split_colors("unseen"),
        )

    # -- contract -----------------------------------------------------------
    def sample_instance(self, split: str, seed: int,
                        frame: WorkspaceFrame) -> tuple[SceneState, GoalState]:
        raise NotImplementedError

    def expert_action(self, state: SceneState, goal: GoalState,
                      frame: WorkspaceFrame) -> PixelAction | None:
        """Next expert action, or None once the goal is complete."""
        raise NotImplementedError

    def score(self, state: SceneState, goal: GoalState,
              frame: WorkspaceFrame) -> float:
        raise NotImplementedError

    def update_progress(self, state: SceneState, goal: GoalState,
                        frame: WorkspaceFrame) -> None:
        """Advance scheduled progress after an action; no-op for goal tasks."""

    def instruction(self, goal: GoalState) -> str:
        raise NotImplementedError

    def is_complete(self, state: SceneState, goal: GoalState,
                    frame: WorkspaceFrame) -> bool:
        return state.steps >= goal.max_steps or self.score(state, goal, frame) >= 100.0


# ---------------------------------------------------------------------------
# Sampling helpers

def ratio_score(achieved: float, total: float) -> float:
    """Partial credit in [0, 100]: the fraction of goal conditions satisfied."""
    if total <= 0:
        raise ValueError("total must be positive")
    return min(max(100.0 * achieved / total, 0.0), 100.0)


def max_steps_for(schedule_len: int) -> int:
    # Generous cap: twice the expert schedule plus slack, always finite.
    return 2 * schedule_len + 2


def sample_layout(build, rng: np.random.Generator, attempts: int = 20):
    """Retry a whole-scene layout when rejection sampling runs out of room.

    The rng stream advances across attempts, so retries stay deterministic
    per seed.
    """
    last_err = None
    for _ in range(attempts):
        try:
            return build(rng)
        except SimulatorError as err:
            last_err = err
    raise SimulatorError(f"layout sampling failed after {attempts} attempts: {last_err}")


def sample_free_pose(rng: np.random.Generator, frame: WorkspaceFrame,
                     clearance: float, occupied: list[tuple[float, float, float]],
                     border: float | None = None, max_tries: int = 2000,
                     ) -> tuple[float, float]:
    """Rejection-sample an (x, y) keeping `clearance` from occupied circles."""
    border = clearance + 0.02 if border is None else border
    for _ in range(max_tries):
        x = rng.uniform(frame.x_min + border, frame.x_max - border)
        y = rng.uniform(frame.y_min + border, frame.y_max - border)
        ok = True
        for ox, oy, orad in occupied:
            if math.hypot(x - ox, y - oy) < clearance + orad + 0.01:
                ok = False
                break
        if ok:
            return x, y
    raise SimulatorError(f"could not place object with clearance {clearance}")


def expert_pose(frame: WorkspaceFrame, pick_xy: tuple[float, float],
                place_xy: tuple[float, float], dyaw: float = 0.0) -> PixelAction:
    """Build a suction-style action: pick bin fixed, place bin encodes dyaw."""
    pick = world_to_pixel(frame, pick_xy[0], pick_xy[1], 0.0, k=1)
    place_bin = nearest_bin(dyaw, PLACE_ROTATIONS)
    pp = world_to_pixel(frame, place_xy[0], place_xy[1])
    return PixelAction(pick=pick,
                       place=PixelPose(pp.u, pp.v, place_bin, PLACE_ROTATIONS))


def position_matches(frame: WorkspaceFrame, xy: tuple[float, float],
                     target_xy: tuple[float, float],
                     tol_px: float = POSITION_TOL_PX) -> bool:
    d = math.hypot(xy[0] - target_xy[0], xy[1] - target_xy[1])
    return d <= tol_px * frame.pixel_size


def yaw_matches(yaw: float, target_yaw: float, symmetry: float | None,
                k: int = PLACE_ROTATIONS) -> bool:
    """Yaw agreement within one rotation bin, modulo object symmetry."""
    if symmetry is None:
        return True
    diff = (yaw - target_yaw) % symmetry
    diff = min(diff, symmetry - diff)
    return diff <= 2.0 * math.pi / k


def symmetric_delta(target_yaw: float, current_yaw: float,
                    symmetry: float | None) -> float:
    """Smallest yaw delta sending current onto target modulo symmetry."""
    if symmetry is None:
        return 0.0
    delta = (target_yaw - current_yaw) % symmetry
    if delta > symmetry / 2:
        delta -= symmetry
    return delta
