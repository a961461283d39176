"""stack-block-pyramid-seq: build a 3-2-1 pyramid in the instructed order."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..geometry import PixelAction, WorkspaceFrame
from ..simulator import (STAND_CELL_OFFSETS, SceneState, make_block, make_stand,
                         split_colors)
from .base import (GoalState, Task, expert_pose, max_steps_for, position_matches,
                   ratio_score, sample_free_pose, sample_layout, symmetric_delta,
                   yaw_matches)

# Local x offsets of the six target slots on / above the stand, rows bottom-up.
ROW0 = STAND_CELL_OFFSETS
ROW1 = (-0.025, 0.025)
ROW2 = (0.0,)


@dataclass
class PyramidGoal(GoalState):
    stand: int = -1
    blocks: list[int] = field(default_factory=list)   # schedule order
    targets: list[tuple[float, float, float]] = field(default_factory=list)  # x, y, yaw


class StackBlockPyramid(Task):
    name = "stack-block-pyramid-seq"

    def sample_instance(self, split, seed, frame):
        rng = np.random.default_rng(seed)
        return sample_layout(lambda r: self._sample_once(split, seed, frame, r), rng)

    def _sample_once(self, split, seed, frame, rng):
        palette = split_colors(split)
        colors = [str(c) for c in rng.choice(palette, size=6, replace=False)]
        side = float(self.cfg["block_side"])
        objects = []
        occupied = []

        stand_clear = math.hypot(0.15, 0.06) / 2 + 0.01
        sx, sy = sample_free_pose(rng, frame, stand_clear, occupied)
        syaw = rng.uniform(0.0, 2 * math.pi)
        stand = make_stand(0, (sx, sy, 0.0, syaw))
        objects.append(stand)
        occupied.append((sx, sy, stand_clear))

        half_diag = side * math.sqrt(2) / 2
        block_ids = []
        for i, color in enumerate(colors):
            x, y = sample_free_pose(rng, frame, half_diag, occupied)
            yaw = rng.uniform(0.0, 2 * math.pi)
            blk = make_block(i + 1, color, side, (x, y, 0.0, yaw))
            objects.append(blk)
            occupied.append((x, y, half_diag))
            block_ids.append(blk.id)

        cos_y, sin_y = math.cos(syaw), math.sin(syaw)
        targets = []
        for off in list(ROW0) + list(ROW1) + list(ROW2):
            targets.append((sx + cos_y * off, sy + sin_y * off, syaw))

        state = SceneState(objects=objects, seed=seed,
                           parent={o.id: None for o in objects})
        goal = PyramidGoal(
            task=self.name, split=split, seed=seed,
            max_steps=max_steps_for(6), schedule_len=6,
            attribute_colors=colors, stand=stand.id,
            blocks=block_ids, targets=targets)
        return state, goal

    def instruction(self, goal: PyramidGoal) -> str:
        step = min(goal.progress, goal.schedule_len - 1)
        colors = goal.attribute_colors
        if step < 3:
            return self.cfg["row_template"].format(color=colors[step],
                                                   cell=self.cfg["cells"][step])
        below = {3: (0, 1), 4: (1, 2), 5: (3, 4)}[step]
        return self.cfg["upper_template"].format(
            color=colors[step],
            color_a=colors[below[0]], color_b=colors[below[1]])

    def _step_satisfied(self, state: SceneState, goal: PyramidGoal, step: int,
                        frame: WorkspaceFrame) -> bool:
        blk = state.by_id(goal.blocks[step])
        tx, ty, tyaw = goal.targets[step]
        return position_matches(frame, blk.pose[:2], (tx, ty)) and \
            yaw_matches(blk.pose[3], tyaw, blk.symmetry)

    def update_progress(self, state, goal: PyramidGoal, frame) -> None:
        while goal.progress < goal.schedule_len and \
                self._step_satisfied(state, goal, goal.progress, frame):
            goal.progress += 1

    def score(self, state, goal: PyramidGoal, frame) -> float:
        return ratio_score(goal.progress, goal.schedule_len)

    def expert_action(self, state, goal: PyramidGoal, frame) -> PixelAction | None:
        if goal.progress >= goal.schedule_len:
            return None
        step = goal.progress
        blk = state.by_id(goal.blocks[step])
        tx, ty, tyaw = goal.targets[step]
        dyaw = symmetric_delta(tyaw, blk.pose[3], blk.symmetry)
        return expert_pose(frame, blk.pose[:2], (tx, ty), dyaw)
