"""put-blocks-in-bowls: move every block of one color into bowls of another."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..geometry import PixelAction, WorkspaceFrame
from ..simulator import SceneState, SceneObject, make_block, make_bowl, split_colors
from .base import (GoalState, Task, expert_pose, max_steps_for, ratio_score,
                   sample_free_pose, sample_layout)


@dataclass
class BowlsGoal(GoalState):
    block_color: str = ""
    bowl_color: str = ""
    relevant_blocks: list[int] = field(default_factory=list)
    target_bowls: list[int] = field(default_factory=list)


class PutBlocksInBowls(Task):
    name = "put-blocks-in-bowls"

    def sample_instance(self, split, seed, frame):
        rng = np.random.default_rng(seed)
        return sample_layout(lambda r: self._sample_once(split, seed, frame, r), rng)

    def _sample_once(self, split, seed, frame, rng):
        palette = split_colors(split)
        block_color, bowl_color = (str(c) for c in rng.choice(palette, size=2, replace=False))
        n_rel = int(rng.integers(self.cfg["relevant_blocks"][0],
                                 self.cfg["relevant_blocks"][1] + 1))
        n_dis_blocks = int(rng.integers(self.cfg["distractor_blocks"][0],
                                        self.cfg["distractor_blocks"][1] + 1))
        n_dis_bowls = int(rng.integers(self.cfg["distractor_bowls"][0],
                                       self.cfg["distractor_bowls"][1] + 1))
        others = [c for c in palette if c not in (block_color, bowl_color)]
        side = float(self.cfg["block_side"])
        radius = float(self.cfg["bowl_radius"])

        objects: list[SceneObject] = []
        occupied: list[tuple[float, float, float]] = []
        oid = 0

        def add(obj, x, y, clearance):
            nonlocal oid
            objects.append(obj)
            occupied.append((x, y, clearance))
            oid += 1

        target_bowls, relevant = [], []
        for _ in range(n_rel):
            x, y = sample_free_pose(rng, frame, radius, occupied)
            bowl = make_bowl(oid, bowl_color, radius, (x, y, 0.0, 0.0))
            target_bowls.append(bowl.id)
            add(bowl, x, y, radius)
        for _ in range(n_dis_bowls):
            color = str(rng.choice(others))
            x, y = sample_free_pose(rng, frame, radius, occupied)
            add(make_bowl(oid, color, radius, (x, y, 0.0, 0.0)), x, y, radius)
        half_diag = side * math.sqrt(2) / 2
        for _ in range(n_rel):
            x, y = sample_free_pose(rng, frame, half_diag, occupied)
            yaw = rng.uniform(0.0, 2 * math.pi)
            blk = make_block(oid, block_color, side, (x, y, 0.0, yaw))
            relevant.append(blk.id)
            add(blk, x, y, half_diag)
        for _ in range(n_dis_blocks):
            color = str(rng.choice(others))
            x, y = sample_free_pose(rng, frame, half_diag, occupied)
            yaw = rng.uniform(0.0, 2 * math.pi)
            add(make_block(oid, color, side, (x, y, 0.0, yaw)), x, y, half_diag)

        state = SceneState(objects=objects, seed=seed,
                           parent={o.id: None for o in objects})
        goal = BowlsGoal(
            task=self.name, split=split, seed=seed,
            max_steps=max_steps_for(n_rel), schedule_len=n_rel,
            attribute_colors=[str(block_color), str(bowl_color)],
            block_color=str(block_color), bowl_color=str(bowl_color),
            relevant_blocks=relevant, target_bowls=target_bowls)
        return state, goal

    def instruction(self, goal: BowlsGoal) -> str:
        return self.cfg["template"].format(block_color=goal.block_color,
                                           bowl_color=goal.bowl_color)

    def _assignments(self, state: SceneState, goal: BowlsGoal):
        """Greedy one-block-per-bowl matching of relevant blocks to target bowls."""
        placed = {}
        used_blocks = set()
        for bid in goal.target_bowls:
            bowl = state.by_id(bid)
            bx, by = bowl.pose[0], bowl.pose[1]
            r = bowl.parts[-1].dims[1]
            for blk_id in goal.relevant_blocks:
                if blk_id in used_blocks:
                    continue
                blk = state.by_id(blk_id)
                if math.hypot(blk.pose[0] - bx, blk.pose[1] - by) <= r:
                    placed[bid] = blk_id
                    used_blocks.add(blk_id)
                    break
        return placed

    def score(self, state, goal: BowlsGoal, frame) -> float:
        placed = self._assignments(state, goal)
        return ratio_score(len(placed), len(goal.relevant_blocks))

    def expert_action(self, state, goal: BowlsGoal, frame) -> PixelAction | None:
        placed = self._assignments(state, goal)
        free_bowls = [b for b in goal.target_bowls if b not in placed]
        todo = [b for b in goal.relevant_blocks if b not in placed.values()]
        if not todo or not free_bowls:
            return None
        blk = state.by_id(min(todo))
        bowl = state.by_id(min(free_bowls))
        return expert_pose(frame, blk.pose[:2], bowl.pose[:2])
