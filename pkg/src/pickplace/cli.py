"""Command-line entry points for the full pipeline.

Every flag mirrors a config-file key of the same name (dashes become
underscores); flags given on the command line override the file.

    pickplace demos  --task put-blocks-in-bowls --split seen --n 10 --seed 0
    pickplace train  --tasks put-blocks-in-bowls --data data --out runs/bowls
    pickplace eval   --checkpoint runs/bowls/best.pt --task put-blocks-in-bowls
    pickplace report --rows runs/**/row_*.json --out reports
    pickplace serve  --port 8642 --checkpoint-dir runs/bowls/checkpoints
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import fields
from pathlib import Path

import yaml


def _load_config(path: str | None, section: str) -> dict:
    if not path:
        return {}
    data = yaml.safe_load(Path(path).read_text()) or {}
    if section in data:
        data = data[section]
    return {k.replace("-", "_"): v for k, v in data.items()}


def _merge(args: argparse.Namespace, config: dict) -> argparse.Namespace:
    for key, value in config.items():
        if getattr(args, key, None) is None and hasattr(args, key):
            setattr(args, key, value)
    return args


def _model_config(args) -> "ModelConfig":
    from .model import ModelConfig
    kwargs = {}
    for name in ("stream_mode", "backbone", "goal_mode", "k_pick", "k_place"):
        value = getattr(args, name, None)
        if value is not None:
            kwargs[name] = value
    if getattr(args, "no_skips", False):
        kwargs["use_skips"] = False
    return ModelConfig(**kwargs)


def cmd_demos(args) -> int:
    from .dataset import generate_demonstrations
    out = generate_demonstrations(args.task, args.split, args.n, args.seed,
                                  args.out)
    print(f"wrote {args.n} episodes to {out}")
    return 0


def cmd_train(args) -> int:
    from .dataset import dataset_dir_name, load_dataset
    from .training import TrainConfig, select_best_checkpoint, train

    task_names = [t.strip() for t in args.tasks.split(",") if t.strip()]
    mode = args.mode or ("multi" if len(task_names) > 1 else "single")
    data_root = Path(args.data)
    datasets = []
    for name in task_names:
        path = data_root / dataset_dir_name(name, args.split)
        if not (path / "index.json").exists():
            raise FileNotFoundError(
                f"no dataset for task {name!r} at {path}; run `pickplace demos` first")
        datasets.append(load_dataset(path))
    train_cfg = TrainConfig(
        mode=mode,
        iterations=args.iterations if args.iterations is not None else
        (15000 if mode == "multi" else 5000),
        learning_rate=args.lr if args.lr is not None else 1e-4,
        augment=not args.no_augment,
        optimizer=args.optimizer or "adam",
        checkpoint_every=args.checkpoint_every or 1000,
        eval_rollouts=args.validate_episodes or 5,
        seed=args.seed or 0)
    result = train(train_cfg, _model_config(args), datasets, args.out)
    val_seeds = list(range(args.validate_seed or 20000,
                           (args.validate_seed or 20000) + train_cfg.eval_rollouts))
    best = select_best_checkpoint(result.checkpoints, task_names, args.split,
                                  val_seeds)
    validation = {task: str(path) for task, path in best.items()}
    (Path(args.out) / "validation.json").write_text(
        json.dumps(validation, indent=2, sort_keys=True) + "\n")
    print(f"trained {train_cfg.iterations} iterations; "
          f"best checkpoints: {validation}")
    return 0


def cmd_eval(args) -> int:
    from .evaluation import ModelPolicy, evaluate, write_report
    from .training import load_checkpoint

    checkpoint = Path(args.checkpoint)
    if checkpoint.is_dir():
        validation = checkpoint / "validation.json"
        if validation.exists():
            best = json.loads(validation.read_text())
            checkpoint = Path(best[args.task])
        else:
            raise FileNotFoundError(f"{checkpoint} has no validation.json")
    model, step = load_checkpoint(checkpoint)
    row = evaluate(ModelPolicy(model), args.task, args.split,
                   n_episodes=args.episodes or 20,
                   base_seed=args.seed if args.seed is not None else 10000,
                   variant=args.variant or model.config.stream_mode,
                   n_demos=args.n_demos or 0)
    out = Path(args.out or "reports")
    out.mkdir(parents=True, exist_ok=True)
    row_path = out / f"row_{args.task}_{args.split}_{row.variant}.json"
    row_path.write_text(json.dumps(row.to_dict(), indent=2, sort_keys=True) + "\n")
    print(f"{args.task} [{args.split}] {row.variant}: mean {row.mean:.1f} "
          f"over {len(row.scores)} episodes -> {row_path}")
    return 0


def cmd_report(args) -> int:
    import glob

    from .evaluation import EvalRow, write_report

    rows = []
    for pattern in args.rows.split(","):
        for path in sorted(glob.glob(pattern.strip(), recursive=True)):
            data = json.loads(Path(path).read_text())
            rows.append(EvalRow(task=data["task"], split=data["split"],
                                variant=data["variant"], n_demos=data["n_demos"],
                                seeds=data["seeds"], scores=data["scores"]))
    if not rows:
        raise FileNotFoundError(f"no row files matched {args.rows!r}")
    txt, js = write_report(rows, args.out or "reports")
    print(txt.read_text())
    print(f"wrote {txt} and {js}")
    return 0


def cmd_serve(args) -> int:
    from .service import serve

    server = serve(host=args.host or "127.0.0.1", port=args.port or 8642,
                   data_out=args.data_out or "human_data",
                   checkpoint_dir=args.checkpoint_dir,
                   frontend_dir=args.frontend_dir)
    host, port = server.server_address
    print(f"annotation service on http://{host}:{port}/ (Ctrl-C to stop)")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        server.shutdown()
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pickplace",
        description="desk-scale language-conditioned pick-and-place")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("demos", help="generate expert demonstrations")
    p.add_argument("--config")
    p.add_argument("--task", required=True)
    p.add_argument("--split", default="seen", choices=["seen", "unseen"])
    p.add_argument("--n", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="data")
    p.set_defaults(func=cmd_demos, section="demos")

    p = sub.add_parser("train", help="train a model and pick best checkpoints")
    p.add_argument("--config")
    p.add_argument("--tasks", required=True, help="comma-separated task names")
    p.add_argument("--split", default="seen", choices=["seen", "unseen"])
    p.add_argument("--mode", choices=["single", "multi"])
    p.add_argument("--data", default="data")
    p.add_argument("--out", default="runs/run")
    p.add_argument("--iterations", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--optimizer", choices=["adam", "sgd"])
    p.add_argument("--no-augment", action="store_true")
    p.add_argument("--checkpoint-every", type=int, dest="checkpoint_every")
    p.add_argument("--seed", type=int)
    p.add_argument("--stream-mode", dest="stream_mode",
                   choices=["two_stream", "spatial_only", "semantic_only"])
    p.add_argument("--backbone")
    p.add_argument("--goal-mode", dest="goal_mode",
                   choices=["language", "image_goal", "none"])
    p.add_argument("--no-skips", action="store_true", dest="no_skips")
    p.add_argument("--k-pick", type=int, dest="k_pick")
    p.add_argument("--k-place", type=int, dest="k_place")
    p.add_argument("--validate-episodes", type=int, dest="validate_episodes")
    p.add_argument("--validate-seed", type=int, dest="validate_seed")
    p.set_defaults(func=cmd_train, section="train")

    p = sub.add_parser("eval", help="evaluate a checkpoint on one task/split")
    p.add_argument("--config")
    p.add_argument("--checkpoint", required=True,
                   help="checkpoint file, or a run dir with validation.json")
    p.add_argument("--task", required=True)
    p.add_argument("--split", default="seen", choices=["seen", "unseen"])
    p.add_argument("--episodes", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--variant")
    p.add_argument("--n-demos", type=int, dest="n_demos")
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval, section="eval")

    p = sub.add_parser("report", help="combine eval rows into a table")
    p.add_argument("--config")
    p.add_argument("--rows", required=True,
                   help="comma-separated glob patterns of row_*.json files")
    p.add_argument("--out")
    p.set_defaults(func=cmd_report, section="report")

    p = sub.add_parser("serve", help="start the annotation service")
    p.add_argument("--config")
    p.add_argument("--host")
    p.add_argument("--port", type=int)
    p.add_argument("--data-out", dest="data_out")
    p.add_argument("--checkpoint-dir", dest="checkpoint_dir")
    p.add_argument("--frontend-dir", dest="frontend_dir")
    p.set_defaults(func=cmd_serve, section="serve")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    _merge(args, _load_config(getattr(args, "config", None), args.section))
    try:
        return args.func(args)
    except KeyboardInterrupt:
        return 130
    except Exception as err:   # noqa: BLE001 - one-line diagnostic contract
        print(f"pickplace {args.command}: error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
