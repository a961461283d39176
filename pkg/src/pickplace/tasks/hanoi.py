"""towers-of-hanoi-seq: the scripted 7-move three-ring solution, one move
instruction per step.  Solvable from ring sizes alone; colors are noise."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..geometry import PixelAction, WorkspaceFrame, world_to_pixel
from ..simulator import PEG_OFFSETS, SceneState, make_peg_base, make_ring, split_colors
from .base import (GoalState, Task, expert_pose, max_steps_for, position_matches,
                   ratio_score, sample_free_pose, sample_layout)

# Optimal three-ring solution, start peg 0 -> target peg 2.
# Entries are (ring rank: 0 small / 1 medium / 2 big, destination peg).
SOLUTION = ((0, 2), (1, 1), (0, 1), (2, 2), (0, 0), (1, 2), (0, 2))


@dataclass
class HanoiGoal(GoalState):
    base: int = -1
    rings: list[int] = field(default_factory=list)   # ids by rank: small, medium, big


class TowersOfHanoi(Task):
    name = "towers-of-hanoi-seq"

    def sample_instance(self, split, seed, frame):
        rng = np.random.default_rng(seed)
        return sample_layout(lambda r: self._sample_once(split, seed, frame, r), rng)

    def _sample_once(self, split, seed, frame, rng):
        palette = split_colors(split)
        colors = [str(c) for c in rng.choice(palette, size=3, replace=False)]
        base_clear = math.hypot(0.12, 0.05) + 0.01
        bx, by = sample_free_pose(rng, frame, base_clear, [])
        byaw = rng.uniform(0.0, 2 * math.pi)
        base = make_peg_base(0, (bx, by, 0.0, byaw))
        objects = [base]

        sizes = [tuple(map(float, s)) for s in self.cfg["ring_sizes"]]
        start = self._peg_world(base, 0)
        rings = []
        z = 0.01  # board top
        parent: dict[int, int | None] = {0: None}
        below = base.id
        for rank in (2, 1, 0):  # big on the bottom
            r_in, r_out, h = sizes[rank]
            ring = make_ring(len(objects), colors[rank], r_in, r_out, h,
                             rank, (start[0], start[1], z, 0.0))
            objects.append(ring)
            parent[ring.id] = below
            below = ring.id
            z += h
            rings.append((rank, ring.id))
        ring_ids = [rid for _, rid in sorted(rings)]

        state = SceneState(objects=objects, seed=seed, parent=parent)
        goal = HanoiGoal(
            task=self.name, split=split, seed=seed,
            max_steps=max_steps_for(len(SOLUTION)), schedule_len=len(SOLUTION),
            attribute_colors=colors, base=base.id, rings=ring_ids)
        return state, goal

    def _peg_world(self, base, peg: int) -> tuple[float, float]:
        x, y, _, yaw = base.pose
        off = PEG_OFFSETS[peg]
        return x + math.cos(yaw) * off, y + math.sin(yaw) * off

    def instruction(self, goal: HanoiGoal) -> str:
        step = min(goal.progress, goal.schedule_len - 1)
        rank, peg = SOLUTION[step]
        return self.cfg["template"].format(color=goal.attribute_colors[rank],
                                           peg=self.cfg["pegs"][peg])

    def _move_done(self, state: SceneState, goal: HanoiGoal, step: int,
                   frame: WorkspaceFrame) -> bool:
        rank, peg = SOLUTION[step]
        ring = state.by_id(goal.rings[rank])
        target = self._peg_world(state.by_id(goal.base), peg)
        return position_matches(frame, ring.pose[:2], target)

    def update_progress(self, state, goal: HanoiGoal, frame) -> None:
        while goal.progress < goal.schedule_len and \
                self._move_done(state, goal, goal.progress, frame):
            goal.progress += 1

    def score(self, state, goal: HanoiGoal, frame) -> float:
        return ratio_score(goal.progress, goal.schedule_len)

    def expert_action(self, state, goal: HanoiGoal, frame) -> PixelAction | None:
        if goal.progress >= goal.schedule_len:
            return None
        rank, peg = SOLUTION[goal.progress]
        ring = state.by_id(goal.rings[rank])
        base = state.by_id(goal.base)
        r_in, r_out = ring.parts[0].dims
        mid_r = (r_in + r_out) / 2
        yaw = base.pose[3]
        # Grasp on the rim, off the peg row so larger rings stay reachable.
        gx = ring.pose[0] + math.cos(yaw + math.pi / 2) * mid_r
        gy = ring.pose[1] + math.sin(yaw + math.pi / 2) * mid_r
        target = self._peg_world(base, peg)
        return expert_pose(frame, (gx, gy), target)
