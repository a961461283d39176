"""Imitation training loop: dense cross-entropy, checkpointing, rollout-based
checkpoint selection, and a finite-difference gradient checker."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
import yaml

from .dataset import StoredDataset, TrainingPair, sample_training_pair
from .encoders import ConfigurationError
from .geometry import PixelPose
from .model import AffordanceMaps, AffordanceModel, ModelConfig, ModelError

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT_VERSION = 1


@dataclass
class TrainConfig:
    mode: str = "single"              # single | multi
    iterations: int = 5000
    learning_rate: float = 1e-4
    batch_size: int = 1
    augment: bool = True
    optimizer: str = "adam"           # adam | sgd
    checkpoint_every: int = 1000
    eval_rollouts: int = 20           # validation episodes per checkpoint
    seed: int = 0

    def __post_init__(self):
        if self.iterations <= 0:
            raise ConfigurationError("iterations must be positive")
        if self.learning_rate <= 0:
            raise ConfigurationError("learning rate must be positive")
        if self.mode not in ("single", "multi"):
            raise ConfigurationError(f"mode {self.mode!r} not in (single, multi)")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigurationError(f"optimizer {self.optimizer!r} not in (adam, sgd)")


@dataclass
class Labels:
    """One-hot supervision targets, stored sparsely as (u, v, rot) indices."""

    pick: tuple[int, int, int]
    place: tuple[int, int, int]
    shape: tuple[int, int]            # (H, W)
    k_pick: int
    k_place: int

    @classmethod
    def from_pair(cls, pair: TrainingPair) -> "Labels":
        f = pair.observation.frame
        return cls(pick=(pair.pick.u, pair.pick.v, pair.pick.rot),
                   place=(pair.place.u, pair.place.v, pair.place.rot),
                   shape=(f.height, f.width),
                   k_pick=pair.pick.k, k_place=pair.place.k)

    def dense_pick(self) -> np.ndarray:
        y = np.zeros(self.shape + (self.k_pick,), dtype=np.float64)
        y[self.pick] = 1.0
        return y

    def dense_place(self) -> np.ndarray:
        y = np.zeros(self.shape + (self.k_place,), dtype=np.float64)
        y[self.place] = 1.0
        return y


def compute_loss(maps: AffordanceMaps, labels: Labels) -> float:
    """Cross-entropy of both heads' softmax over all pixels and bins."""
    for name, q in (("q_pick", maps.q_pick), ("q_place", maps.q_place)):
        if not np.isfinite(q).all():
            raise ModelError(f"{name} contains non-finite values")

    def nll(q: np.ndarray, index: tuple[int, int, int]) -> float:
        flat = q.reshape(-1).astype(np.float64)
        m = flat.max()
        logz = m + math.log(np.exp(flat - m).sum())
        u, v, r = index
        return float(logz - q[u, v, r])

    return nll(maps.q_pick, labels.pick) + nll(maps.q_place, labels.place)


def loss_from_logits(q_pick: torch.Tensor, q_place: torch.Tensor,
                     labels: Labels) -> torch.Tensor:
    """Torch twin of compute_loss for training; layouts (1,k,H,W) and (k,H,W)."""
    h, w = labels.shape

    def nll(q: torch.Tensor, index: tuple[int, int, int]) -> torch.Tensor:
        u, v, r = index
        # Both heads order as (k, H, W) once squeezed to 3 dims.
        q3 = q.reshape(-1, h, w)
        idx = torch.tensor([(r * h + u) * w + v])
        return torch.nn.functional.cross_entropy(q3.reshape(1, -1), idx)

    return nll(q_pick, labels.pick) + nll(q_place, labels.place)


# ---------------------------------------------------------------------------
# Checkpoints

def save_checkpoint(model: AffordanceModel, step: int, path: Path,
                    extra: dict | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "config": model.config.to_dict(),
        "state_dict": model.state_dict(),
        "step": step,
        "torch_rng": torch.get_rng_state(),
    }
    if extra:
        payload["extra"] = extra
    torch.save(payload, path)
    return path


def load_checkpoint(path: Path, expect_config: ModelConfig | None = None,
                    ) -> tuple[AffordanceModel, int]:
    payload = torch.load(Path(path), map_location="cpu", weights_only=False)
    if payload.get("format_version") != CHECKPOINT_FORMAT_VERSION:
        raise ConfigurationError(
            f"checkpoint {path} has format {payload.get('format_version')}, "
            f"expected {CHECKPOINT_FORMAT_VERSION}")
    config = ModelConfig.from_dict(payload["config"])
    if expect_config is not None and config != expect_config:
        raise ConfigurationError(
            f"checkpoint config {config} does not match expected {expect_config}")
    model = AffordanceModel(config)
    model.load_state_dict(payload["state_dict"])
    return model, int(payload["step"])


# ---------------------------------------------------------------------------
# Training loop

@dataclass
class TrainResult:
    run_dir: Path
    checkpoints: list[Path]
    losses: list[float]
    stopped_early_at: int | None = None


def make_optimizer(model: AffordanceModel, cfg: TrainConfig) -> torch.optim.Optimizer:
    params = model.trainable_parameters()
    if cfg.optimizer == "adam":
        return torch.optim.Adam(params, lr=cfg.learning_rate)
    return torch.optim.SGD(params, lr=cfg.learning_rate)


def train(train_cfg: TrainConfig, model_cfg: ModelConfig,
          datasets: list[StoredDataset], run_dir: Path | str,
          stop_check=None, log_every: int = 100) -> TrainResult:
    """Run the imitation loop; returns checkpoints saved at the configured cadence.

    ``stop_check(model, step) -> bool`` is polled at every checkpoint cadence;
    returning True ends training early (used by overfit-style tests).
    """
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.yaml").write_text(yaml.safe_dump({
        "train": asdict(train_cfg), "model": model_cfg.to_dict()}))
    torch.manual_seed(train_cfg.seed)
    torch.set_flush_denormal(True)
    rng = np.random.default_rng(train_cfg.seed)
    model = AffordanceModel(model_cfg)
    optimizer = make_optimizer(model, train_cfg)
    ckpt_dir = run_dir / "checkpoints"
    checkpoints: list[Path] = []
    losses: list[float] = []
    stopped_at = None
    with open(run_dir / "loss.jsonl", "w") as loss_log:
        for step in range(1, train_cfg.iterations + 1):
            optimizer.zero_grad()
            batch_loss = 0.0
            for _ in range(train_cfg.batch_size):
                pair = sample_training_pair(datasets, train_cfg.mode, rng,
                                            augment_flag=train_cfg.augment)
                labels = Labels.from_pair(pair)
                # Teacher forcing: the query crop is centered on the expert
                # pick label, not the model's own argmax.
                q_pick, q_place = model.forward_maps(
                    pair.observation, pair.instruction, pick=pair.pick)
                loss = loss_from_logits(q_pick, q_place, labels) / train_cfg.batch_size
                loss.backward()
                batch_loss += float(loss.detach())
            if not math.isfinite(batch_loss):
                save_checkpoint(model, step, ckpt_dir / "diagnostic.pt",
                                extra={"reason": "non-finite loss"})
                raise ModelError(f"non-finite loss at step {step}; "
                                 f"diagnostic checkpoint saved under {ckpt_dir}")
            optimizer.step()
            losses.append(batch_loss)
            loss_log.write(json.dumps({"step": step, "loss": batch_loss,
                                       "task": pair.task}) + "\n")
            if step % log_every == 0:
                log.info("step %d loss %.4f", step, batch_loss)
            if step % train_cfg.checkpoint_every == 0 or step == train_cfg.iterations:
                checkpoints.append(save_checkpoint(model, step,
                                                   ckpt_dir / f"step_{step:06d}.pt"))
                if stop_check is not None and stop_check(model, step):
                    stopped_at = step
                    break
    return TrainResult(run_dir=run_dir, checkpoints=checkpoints, losses=losses,
                       stopped_early_at=stopped_at)


def _rollout_score(model: AffordanceModel, task_name: str, split: str,
                   seed: int) -> float:
    from .evaluation import ModelPolicy, run_episode
    return run_episode(ModelPolicy(model), task_name, split, seed)[0]


def select_best_checkpoint(checkpoints: list[Path], task_names: list[str],
                           split: str, validation_seeds: list[int],
                           score_fn=None) -> dict[str, Path]:
    """Mean rollout score per checkpoint per task; best wins, ties go latest.

    Validation loss is a poor selector when demonstrations are multimodal,
    so selection always runs task executions.
    """
    if not checkpoints:
        raise ConfigurationError("no checkpoints to select from")
    score_fn = score_fn or _rollout_score
    best: dict[str, Path] = {}
    for task_name in task_names:
        best_score = -1.0
        best_path = checkpoints[-1]
        for path in checkpoints:
            model, _ = load_checkpoint(Path(path))
            mean = float(np.mean([score_fn(model, task_name, split, seed)
                                  for seed in validation_seeds]))
            if mean >= best_score:
                best_score, best_path = mean, Path(path)
        best[task_name] = best_path
    return best


# ---------------------------------------------------------------------------
# Gradient checking

GRADCHECK_DENOM_FLOOR = 1e-5


def gradient_check(model: AffordanceModel, pair: TrainingPair,
                   n_probes_per_head: int = 100, eps: float = 2e-6,
                   seed: int = 0) -> dict[str, float]:
    """Central finite differences vs autograd in double precision.

    Returns the max relative error per head (pick / query / key nets),
    where relative error is |a - n| / max(|a|, |n|, floor): parameters with
    near-zero gradients are compared absolutely at the floor scale, which
    for this loss (~20) is tighter than the relative bound on O(1) grads.
    """
    model = model.double()

    def closure() -> torch.Tensor:
        q_pick, q_place = model.forward_maps(
            pair.observation, pair.instruction, pick=pair.pick,
            dtype=torch.float64)
        return loss_from_logits(q_pick, q_place, Labels.from_pair(pair))

    model.zero_grad()
    closure().backward()
    heads = {"pick": model.pick_net, "query": model.query_net, "key": model.key_net}
    rng = np.random.default_rng(seed)
    worst: dict[str, float] = {}
    for head_name, head in heads.items():
        params = [p for p in head.parameters() if p.requires_grad]
        errors = []
        for _ in range(n_probes_per_head):
            p = params[int(rng.integers(len(params)))]
            idx = int(rng.integers(p.numel()))
            analytic = float(p.grad.reshape(-1)[idx])
            with torch.no_grad():
                orig = float(p.reshape(-1)[idx])
                p.reshape(-1)[idx] = orig + eps
                up = float(closure())
                p.reshape(-1)[idx] = orig - eps
                down = float(closure())
                p.reshape(-1)[idx] = orig
            numeric = (up - down) / (2 * eps)
            denom = max(abs(analytic), abs(numeric), GRADCHECK_DENOM_FLOOR)
            errors.append(abs(analytic - numeric) / denom)
        worst[head_name] = max(errors)
    return worst
