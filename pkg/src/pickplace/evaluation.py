"""Episode rollouts, multi-seed scoring, and report tables."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import simulator, tasks
from .dataset import EpisodeRecord
from .geometry import PixelAction, PixelPose, WorkspaceFrame

log = logging.getLogger(__name__)


@dataclass
class EpisodeContext:
    """Privileged handles for oracle policies; learned policies ignore it."""

    task: object
    state: object
    goal: object
    frame: WorkspaceFrame


class ModelPolicy:
    """Wraps an affordance model as an (observation, instruction) policy."""

    def __init__(self, model):
        self.model = model

    def act(self, obs, instruction, context=None) -> PixelAction:
        return self.model.act(obs, instruction)


class ExpertPolicy:
    """Scripted oracle; reads simulator state through the episode context."""

    def act(self, obs, instruction, context: EpisodeContext) -> PixelAction:
        action = context.task.expert_action(context.state, context.goal, context.frame)
        if action is None:
            raise RuntimeError("expert queried after goal completion")
        return action


class RandomPolicy:
    """Uniform random actions: the sanity floor."""

    def __init__(self, seed: int = 0, k_place: int = tasks.PLACE_ROTATIONS):
        self.rng = np.random.default_rng(seed)
        self.k_place = k_place

    def act(self, obs, instruction, context=None) -> PixelAction:
        h, w = obs.frame.height, obs.frame.width
        return PixelAction(
            pick=PixelPose(int(self.rng.integers(h)), int(self.rng.integers(w)), 0, 1),
            place=PixelPose(int(self.rng.integers(h)), int(self.rng.integers(w)),
                            int(self.rng.integers(self.k_place)), self.k_place))


def _clamp_action(action: PixelAction, frame: WorkspaceFrame) -> tuple[PixelAction, bool]:
    def clamp(p: PixelPose) -> PixelPose:
        return PixelPose(min(max(p.u, 0), frame.height - 1),
                         min(max(p.v, 0), frame.width - 1),
                         p.rot % p.k, p.k)
    clipped = PixelAction(pick=clamp(action.pick), place=clamp(action.place))
    return clipped, clipped != action


def run_episode(policy, task_name: str, split: str, seed: int,
                frame: WorkspaceFrame | None = None,
                ) -> tuple[float, list[EpisodeRecord]]:
    """Roll one episode to oracle completion or the step cap.

    Out-of-bounds policy actions are clamped and logged, never fatal.
    Deterministic given (policy snapshot, seed).
    """
    state, obs, goal = simulator.reset(task_name, split, seed, frame)
    task = tasks.get_task(task_name)
    frame = obs.frame
    trajectory: list[EpisodeRecord] = []
    while not task.is_complete(state, goal, frame):
        instruction = task.instruction(goal)
        context = EpisodeContext(task=task, state=state, goal=goal, frame=frame)
        action = policy.act(obs, instruction, context)
        action, was_clamped = _clamp_action(action, frame)
        if was_clamped:
            log.warning("clamped out-of-bounds action on %s seed %d", task_name, seed)
        trajectory.append(EpisodeRecord(observation=obs, instruction=instruction,
                                        action=action))
        state, _ = simulator.apply_pick_place(state, action, frame)
        task.update_progress(state, goal, frame)
        obs = simulator.render_observation(state, frame)
    return task.score(state, goal, frame), trajectory


@dataclass
class EvalRow:
    task: str
    split: str
    variant: str
    n_demos: int
    seeds: list[int]
    scores: list[float]

    @property
    def mean(self) -> float:
        return float(np.mean(self.scores))

    def to_dict(self) -> dict:
        return {"task": self.task, "split": self.split, "variant": self.variant,
                "n_demos": self.n_demos, "seeds": self.seeds,
                "scores": self.scores, "mean": self.mean}


def evaluate(policy, task_name: str, split: str, n_episodes: int = 20,
             base_seed: int = 10_000, variant: str = "model",
             n_demos: int = 0) -> EvalRow:
    if n_episodes < 1:
        raise ValueError("n_episodes must be >= 1")
    seeds = list(range(base_seed, base_seed + n_episodes))
    scores = [run_episode(policy, task_name, split, seed)[0] for seed in seeds]
    return EvalRow(task=task_name, split=split, variant=variant,
                   n_demos=n_demos, seeds=seeds, scores=scores)


def make_report(rows: list[EvalRow]) -> tuple[str, dict]:
    """Text grid (tasks x variants) plus the machine-readable payload."""
    variants = sorted({(r.variant, r.n_demos) for r in rows},
                      key=lambda t: (t[0], t[1]))
    lines_keys = sorted({(r.task, r.split) for r in rows})
    col_names = [f"{v} (n={n})" if n else v for v, n in variants]
    width = max([len(c) for c in col_names] + [12])
    task_w = max([len(f"{t} [{s}]") for t, s in lines_keys] + [10])
    header = " | ".join(["task".ljust(task_w)] + [c.rjust(width) for c in col_names])
    sep = "-+-".join(["-" * task_w] + ["-" * width] * len(col_names))
    lines = [header, sep]
    cell_map = {(r.task, r.split, r.variant, r.n_demos): r for r in rows}
    for task_name, split in lines_keys:
        cells = []
        for variant, n in variants:
            row = cell_map.get((task_name, split, variant, n))
            cells.append(f"{row.mean:.1f}".rjust(width) if row else "–".rjust(width))
        lines.append(" | ".join([f"{task_name} [{split}]".ljust(task_w)] + cells))
    payload = {"rows": [r.to_dict() for r in rows]}
    return "\n".join(lines) + "\n", payload


def write_report(rows: list[EvalRow], out_dir: Path | str,
                 name: str = "report") -> tuple[Path, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    text, payload = make_report(rows)
    txt_path = out_dir / f"{name}.txt"
    json_path = out_dir / f"{name}.json"
    txt_path.write_text(text)
    json_path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")
    return txt_path, json_path
