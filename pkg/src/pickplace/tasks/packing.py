"""packing-box-pairs: pack boxes of two named colors onto the brown pallet."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..geometry import PixelAction, WorkspaceFrame
from ..simulator import SceneState, SceneObject, make_box, make_pallet, split_colors
from .base import (GoalState, Task, expert_pose, max_steps_for, ratio_score,
                   sample_free_pose, sample_layout, symmetric_delta)


@dataclass
class PackingGoal(GoalState):
    color_a: str = ""
    color_b: str = ""
    container: int = -1
    # Parallel lists: local cell centers, cell dims, assigned box ids.
    cell_centers: list[tuple[float, float]] = field(default_factory=list)
    cell_dims: list[tuple[float, float]] = field(default_factory=list)
    cell_boxes: list[int] = field(default_factory=list)


def _guillotine(rng: np.random.Generator, l: float, w: float,
                n_cells: int, min_cell: float) -> list[tuple[float, float, float, float]]:
    """Split an l x w rectangle (centered at origin) into n axis-aligned cells."""
    cells = [(0.0, 0.0, l, w)]
    guard = 0
    while len(cells) < n_cells and guard < 200:
        guard += 1
        idx = int(rng.integers(len(cells)))
        cx, cy, cl, cw = cells[idx]
        split_long = cl >= cw
        span = cl if split_long else cw
        if span < 2 * min_cell:
            continue
        cut = rng.uniform(min_cell, span - min_cell)
        if split_long:
            a = (cx - cl / 2 + cut / 2, cy, cut, cw)
            b = (cx - cl / 2 + cut + (cl - cut) / 2, cy, cl - cut, cw)
        else:
            a = (cx, cy - cw / 2 + cut / 2, cl, cut)
            b = (cx, cy - cw / 2 + cut + (cw - cut) / 2, cl, cw - cut)
        cells[idx] = a
        cells.append(b)
    return cells


class PackingBoxPairs(Task):
    name = "packing-box-pairs"

    def sample_instance(self, split, seed, frame):
        rng = np.random.default_rng(seed)
        return sample_layout(lambda r: self._sample_once(split, seed, frame, r), rng)

    def _sample_once(self, split, seed, frame, rng):
        palette = [c for c in split_colors(split) if c != "brown"]
        color_a, color_b = (str(c) for c in rng.choice(palette, size=2, replace=False))
        others = [c for c in palette if c not in (color_a, color_b)]
        cl = rng.uniform(*self.cfg["container_length"])
        cw = rng.uniform(*self.cfg["container_width"])
        n_cells = int(rng.choice(self.cfg["cells"]))
        cells = _guillotine(rng, cl, cw, n_cells, float(self.cfg["min_cell"]))
        gap = float(self.cfg["box_gap"])
        box_h = float(self.cfg["box_height"])

        objects: list[SceneObject] = []
        occupied: list[tuple[float, float, float]] = []
        oid = 0
        c_clear = math.hypot(cl, cw) / 2
        cx0, cy0 = sample_free_pose(rng, frame, c_clear, occupied)
        cyaw = rng.uniform(0.0, 2 * math.pi)
        container = make_pallet(oid, (cl, cw), (cx0, cy0, 0.0, cyaw))
        objects.append(container)
        occupied.append((cx0, cy0, c_clear))
        oid += 1

        centers, dims, box_ids = [], [], []
        for ccx, ccy, ccl, ccw in cells:
            bl, bw = max(ccl - gap, 0.02), max(ccw - gap, 0.02)
            color = color_a if rng.random() < 0.5 else color_b
            clear = math.hypot(bl, bw) / 2
            x, y = sample_free_pose(rng, frame, clear, occupied)
            yaw = rng.uniform(0.0, 2 * math.pi)
            box = make_box(oid, color, (bl, bw, box_h), (x, y, 0.0, yaw))
            objects.append(box)
            occupied.append((x, y, clear))
            oid += 1
            centers.append((ccx, ccy))
            dims.append((bl, bw))
            box_ids.append(box.id)
        n_dis = int(rng.integers(self.cfg["distractor_boxes"][0],
                                 self.cfg["distractor_boxes"][1] + 1))
        for i in range(n_dis):
            bl, bw = dims[int(rng.integers(len(dims)))]
            color = str(rng.choice(others))
            clear = math.hypot(bl, bw) / 2
            x, y = sample_free_pose(rng, frame, clear, occupied)
            yaw = rng.uniform(0.0, 2 * math.pi)
            objects.append(make_box(oid, color, (bl, bw, box_h), (x, y, 0.0, yaw)))
            occupied.append((x, y, clear))
            oid += 1

        state = SceneState(objects=objects, seed=seed,
                           parent={o.id: None for o in objects})
        goal = PackingGoal(
            task=self.name, split=split, seed=seed,
            max_steps=max_steps_for(len(cells)), schedule_len=len(cells),
            attribute_colors=[color_a, color_b],
            color_a=color_a, color_b=color_b, container=container.id,
            cell_centers=centers, cell_dims=dims, cell_boxes=box_ids)
        return state, goal

    def instruction(self, goal: PackingGoal) -> str:
        return self.cfg["template"].format(color_a=goal.color_a, color_b=goal.color_b)

    def _inside_container(self, state: SceneState, goal: PackingGoal,
                          box: SceneObject) -> bool:
        cont = state.by_id(goal.container)
        cx, cy, _, cyaw = cont.pose
        cl, cw = cont.size[0], cont.size[1]
        dx, dy = box.pose[0] - cx, box.pose[1] - cy
        lx = math.cos(cyaw) * dx + math.sin(cyaw) * dy
        ly = -math.sin(cyaw) * dx + math.cos(cyaw) * dy
        return abs(lx) <= cl / 2 and abs(ly) <= cw / 2

    def score(self, state, goal: PackingGoal, frame) -> float:
        total = 0.0
        packed = 0.0
        for bid in goal.cell_boxes:
            box = state.by_id(bid)
            vol = box.size[0] * box.size[1] * box.size[2]
            total += vol
            if self._inside_container(state, goal, box):
                packed += vol
        return ratio_score(packed, total)

    def _cell_world(self, state: SceneState, goal: PackingGoal, idx: int):
        cont = state.by_id(goal.container)
        cx, cy, _, cyaw = cont.pose
        ox, oy = goal.cell_centers[idx]
        x = cx + math.cos(cyaw) * ox - math.sin(cyaw) * oy
        y = cy + math.sin(cyaw) * ox + math.cos(cyaw) * oy
        return x, y, cyaw

    def expert_action(self, state, goal: PackingGoal, frame) -> PixelAction | None:
        for idx, bid in enumerate(goal.cell_boxes):
            box = state.by_id(bid)
            if self._inside_container(state, goal, box):
                continue
            tx, ty, tyaw = self._cell_world(state, goal, idx)
            dyaw = symmetric_delta(tyaw, box.pose[3], box.symmetry)
            return expert_pose(frame, box.pose[:2], (tx, ty), dyaw)
        return None
