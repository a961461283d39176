"""Demonstration generation, on-disk episode format, SE(2) augmentation,
and training-pair sampling.

Storage layout (all bytes deterministic given the generation arguments):

    <root>/<task>-<split>/
        index.json
        episode_00000/
            manifest.json
            obs_000_color.npy.gz      # uint8 H x W x 3
            obs_000_height.npy.gz     # float32 H x W
            ...

Color maps are palette-exact uint8, so the float32 observations round-trip
bit-for-bit through storage.
"""

from __future__ import annotations

import gzip
import io
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import simulator, tasks
from .geometry import (Observation, PixelAction, PixelPose, WorkspaceFrame,
                       bin_angle, transform_pixel, warp_se2)

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
AUGMENT_TRANSLATION_FRAC = 0.25
AUGMENT_MAX_RETRIES = 100


@dataclass
class EpisodeRecord:
    observation: Observation
    instruction: str
    action: PixelAction


@dataclass
class Episode:
    task: str
    split: str
    seed: int
    records: list[EpisodeRecord]
    final_score: float
    source: str = "expert"

    def __len__(self):
        return len(self.records)


@dataclass
class TrainingPair:
    observation: Observation
    instruction: str
    pick: PixelPose
    place: PixelPose
    task: str


# ---------------------------------------------------------------------------
# Serialization

def _write_npy_gz(path: Path, arr: np.ndarray) -> None:
    buf = io.BytesIO()
    np.save(buf, arr)
    with open(path, "wb") as f:
        with gzip.GzipFile(fileobj=f, mode="wb", mtime=0) as gz:
            gz.write(buf.getvalue())


def _read_npy_gz(path: Path) -> np.ndarray:
    with gzip.open(path, "rb") as gz:
        return np.load(io.BytesIO(gz.read()))


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")


def color_to_u8(color: np.ndarray) -> np.ndarray:
    return np.round(color * 255.0).astype(np.uint8)


def u8_to_color(u8: np.ndarray) -> np.ndarray:
    return (u8.astype(np.float32) / np.float32(255.0))


def save_episode(episode: Episode, dataset_dir: Path, index: int) -> Path:
    ep_dir = dataset_dir / f"episode_{index:05d}"
    ep_dir.mkdir(parents=True, exist_ok=True)
    frame = episode.records[0].observation.frame
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "task": episode.task,
        "split": episode.split,
        "seed": episode.seed,
        "source": episode.source,
        "final_score": episode.final_score,
        "n_steps": len(episode.records),
        "frame": frame.to_dict(),
        "instructions": [r.instruction for r in episode.records],
        "actions": [r.action.to_dict() for r in episode.records],
    }
    for i, rec in enumerate(episode.records):
        _write_npy_gz(ep_dir / f"obs_{i:03d}_color.npy.gz",
                      color_to_u8(rec.observation.color))
        _write_npy_gz(ep_dir / f"obs_{i:03d}_height.npy.gz",
                      rec.observation.height.astype(np.float32))
    _write_json(ep_dir / "manifest.json", manifest)
    return ep_dir


def load_episode(ep_dir: Path) -> Episode:
    manifest = json.loads((ep_dir / "manifest.json").read_text())
    frame = WorkspaceFrame.from_dict(manifest["frame"])
    records = []
    for i in range(manifest["n_steps"]):
        color = u8_to_color(_read_npy_gz(ep_dir / f"obs_{i:03d}_color.npy.gz"))
        height = _read_npy_gz(ep_dir / f"obs_{i:03d}_height.npy.gz")
        obs = Observation(color=color, height=height, frame=frame)
        records.append(EpisodeRecord(
            observation=obs,
            instruction=manifest["instructions"][i],
            action=PixelAction.from_dict(manifest["actions"][i])))
    return Episode(task=manifest["task"], split=manifest["split"],
                   seed=manifest["seed"], records=records,
                   final_score=manifest["final_score"], source=manifest["source"])


@dataclass
class StoredDataset:
    """A dataset directory loaded into memory for sampling."""

    path: Path
    task: str
    split: str
    episodes: list[Episode] = field(default_factory=list)

    @property
    def pairs(self) -> list[TrainingPair]:
        if not hasattr(self, "_pairs"):
            self._pairs = [
                TrainingPair(observation=r.observation, instruction=r.instruction,
                             pick=r.action.pick, place=r.action.place, task=self.task)
                for ep in self.episodes for r in ep.records
            ]
        return self._pairs


def dataset_dir_name(task: str, split: str) -> str:
    return f"{task}-{split}"


def load_dataset(path: Path | str) -> StoredDataset:
    path = Path(path)
    index = json.loads((path / "index.json").read_text())
    episodes = [load_episode(path / name) for name in index["episodes"]]
    return StoredDataset(path=path, task=index["task"], split=index["split"],
                         episodes=episodes)


def append_episode(dataset_dir: Path | str, episode: Episode) -> Path:
    """Add one episode (e.g. human-annotated) to a dataset, creating it if new."""
    dataset_dir = Path(dataset_dir)
    dataset_dir.mkdir(parents=True, exist_ok=True)
    index_path = dataset_dir / "index.json"
    if index_path.exists():
        index = json.loads(index_path.read_text())
    else:
        index = {"schema_version": SCHEMA_VERSION, "task": episode.task,
                 "split": episode.split, "episodes": []}
    n = len(index["episodes"])
    ep_dir = save_episode(episode, dataset_dir, n)
    index["episodes"].append(ep_dir.name)
    _write_json(index_path, index)
    return ep_dir


# ---------------------------------------------------------------------------
# Expert rollouts

def run_expert_episode(task_name: str, split: str, seed: int,
                       frame: WorkspaceFrame | None = None) -> Episode:
    """Roll the scripted expert to completion and record every step."""
    state, obs, goal = simulator.reset(task_name, split, seed, frame)
    task = tasks.get_task(task_name)
    frame = obs.frame
    records = []
    while not task.is_complete(state, goal, frame):
        action = task.expert_action(state, goal, frame)
        if action is None:
            break
        records.append(EpisodeRecord(observation=obs,
                                     instruction=task.instruction(goal),
                                     action=action))
        state, _ = simulator.apply_pick_place(state, action, frame)
        task.update_progress(state, goal, frame)
        obs = simulator.render_observation(state, frame)
    return Episode(task=task_name, split=split, seed=seed, records=records,
                   final_score=task.score(state, goal, frame))


def generate_demonstrations(task_name: str, split: str, n: int, base_seed: int,
                            root: Path | str,
                            frame: WorkspaceFrame | None = None) -> Path:
    """Persist n perfect expert episodes; imperfect rollouts are resampled."""
    if n < 1:
        raise ValueError("n must be >= 1")
    root = Path(root)
    dataset_dir = root / dataset_dir_name(task_name, split)
    dataset_dir.mkdir(parents=True, exist_ok=True)
    episodes = []
    seed = base_seed
    attempts: list[bool] = []
    while len(episodes) < n:
        episode = run_expert_episode(task_name, split, seed, frame)
        ok = episode.final_score >= 100.0
        attempts.append(ok)
        if ok:
            ep_dir = save_episode(episode, dataset_dir, len(episodes))
            episodes.append(ep_dir.name)
        else:
            log.warning("expert scored %.1f on %s/%s seed %d; resampling",
                        episode.final_score, task_name, split, seed)
        window = attempts[-20:]
        if len(window) >= 10 and sum(not x for x in window) > len(window) / 2:
            raise RuntimeError(
                f"expert failure rate {sum(not x for x in window)}/{len(window)} "
                f"on {task_name}/{split}: task implementation looks broken")
        seed += 1
    _write_json(dataset_dir / "index.json", {
        "schema_version": SCHEMA_VERSION,
        "task": task_name,
        "split": split,
        "base_seed": base_seed,
        "n_episodes": n,
        "episodes": episodes,
    })
    return dataset_dir


def replay_episode(episode: Episode,
                   frame: WorkspaceFrame | None = None) -> bool:
    """True iff stored actions regenerate the stored observations bit-exactly."""
    state, obs, _ = simulator.reset(episode.task, episode.split, episode.seed, frame)
    frame = obs.frame
    for rec in episode.records:
        if not (np.array_equal(obs.color, rec.observation.color)
                and np.array_equal(obs.height, rec.observation.height)):
            return False
        state, _ = simulator.apply_pick_place(state, rec.action, frame)
        obs = simulator.render_observation(state, frame)
    return True


# ---------------------------------------------------------------------------
# Augmentation and sampling

def augment(pair: TrainingPair, rng: np.random.Generator,
            translation_frac: float = AUGMENT_TRANSLATION_FRAC,
            ) -> TrainingPair | None:
    """Random SE(2) warp of one training pair; None when a label leaves frame.

    Rotations are sampled on the place-bin lattice.  Place bins encode the
    pick-relative rotation, which a whole-image rotation leaves unchanged;
    pick bins are absolute and shift with the image when k > 1.
    """
    frame = pair.observation.frame
    h, w = frame.height, frame.width
    k_place = pair.place.k
    rot_bin = int(rng.integers(k_place))
    dtheta = bin_angle(rot_bin, k_place)
    max_du = int(round(translation_frac * h))
    max_dv = int(round(translation_frac * w))
    dx = int(rng.integers(-max_du, max_du + 1))
    dy = int(rng.integers(-max_dv, max_dv + 1))
    center = ((h - 1) / 2.0, (w - 1) / 2.0)

    def map_pose(pose: PixelPose, shift_bin: bool) -> PixelPose | None:
        tu, tv = transform_pixel(pose.u, pose.v, dx, dy, dtheta, center)
        u, v = int(round(tu)), int(round(tv))
        if not (0 <= u < h and 0 <= v < w):
            return None
        rot = pose.rot
        if shift_bin and pose.k > 1:
            shift = round(dtheta / (2.0 * math.pi / pose.k))
            rot = int((pose.rot + shift) % pose.k)
        return PixelPose(u, v, rot, pose.k)

    new_pick = map_pose(pair.pick, shift_bin=True)
    new_place = map_pose(pair.place, shift_bin=False)
    if new_pick is None or new_place is None:
        return None
    warped = warp_se2(pair.observation, dx, dy, dtheta, center)
    return TrainingPair(observation=warped, instruction=pair.instruction,
                        pick=new_pick, place=new_place, task=pair.task)


def sample_training_pair(datasets: list[StoredDataset], mode: str,
                         rng: np.random.Generator,
                         augment_flag: bool = False) -> TrainingPair:
    """Draw one supervision pair: uniform over pairs (single) or task-first (multi)."""
    if not datasets:
        raise ValueError("no datasets to sample from")
    if mode == "single":
        if len(datasets) != 1:
            raise ValueError(f"single mode expects one dataset, got {len(datasets)}")
        source = datasets[0]
    elif mode == "multi":
        source = datasets[int(rng.integers(len(datasets)))]
    else:
        raise ValueError(f"unknown sampling mode {mode!r}")
    pairs = source.pairs
    pair = pairs[int(rng.integers(len(pairs)))]
    if not augment_flag:
        return pair
    for _ in range(AUGMENT_MAX_RETRIES):
        candidate = augment(pair, rng)
        if candidate is not None:
            return candidate
    log.warning("augmentation retry budget exhausted; using original pair")
    return pair
