"""``fifseg`` command line: synth, train, eval, ablate, gradcheck.

Exit codes: 0 ok, 2 configuration error, 3 data error, 4 numeric failure
(including a failed gradient check).
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from ..data import SynthSpec, load_dataset, synth_generate, write_dataset
from ..errors import ConfigError, FifsegError
from .ablate import ablate
from .config import TrainConfig
from .gradcheck import gradcheck_suite
from .train import evaluate, prepare_data, train

log = logging.getLogger("fifseg")

MODEL_FLAGS = {
    "image_size": int,
    "in_channels": int,
    "base_channels": int,
    "num_classes": int,
    "se_ratio": int,
}
TRAIN_FLAGS = {
    "lr": float,
    "weight_decay": float,
    "epochs": int,
    "batch_size": int,
    "lambda1": float,
    "lambda2": float,
    "seed": int,
    "output_dir": str,
    "max_steps": int,
    "data_dir": str,
    "train_count": int,
    "val_count": int,
    "noise_sigma": float,
    "stop_at_dice": float,
}


def _parse_value(raw: str):
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def _add_config_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="JSON TrainConfig file")
    p.add_argument("--desk", action="store_true", help="start from the small CPU preset")
    for name, typ in {**MODEL_FLAGS, **TRAIN_FLAGS}.items():
        p.add_argument("--" + name.replace("_", "-"), dest=name, type=typ, default=None)
    p.add_argument("--stage-blocks", dest="stage_blocks", type=int, nargs=4, default=None)
    for flag in ("cose", "csi", "mlf"):
        p.add_argument(f"--no-{flag}", dest=f"use_{flag}", action="store_false", default=None)
    p.add_argument("--no-mutation", dest="mutation_enabled", action="store_false", default=None)
    p.add_argument("--normalize-mutation", dest="normalize_mutation", action="store_true", default=None)
    p.add_argument("--no-augment", dest="augment", action="store_false", default=None)
    p.add_argument("--overfit", action="store_true", default=None)
    p.add_argument(
        "--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
        help="override any config field; model fields as model.KEY",
    )


def build_config(args: argparse.Namespace) -> TrainConfig:
    if args.config is not None:
        base = TrainConfig.from_json(args.config)
    elif args.desk:
        base = TrainConfig.desk()
    else:
        base = TrainConfig()
    changes: dict = {}
    model: dict = {}
    for name in MODEL_FLAGS:
        if getattr(args, name) is not None:
            model[name] = getattr(args, name)
    for name in ("stage_blocks", "use_cose", "use_csi", "use_mlf"):
        if getattr(args, name) is not None:
            model[name] = getattr(args, name)
    for name in list(TRAIN_FLAGS) + ["mutation_enabled", "normalize_mutation", "augment", "overfit"]:
        if getattr(args, name) is not None:
            changes[name] = getattr(args, name)
    for item in args.overrides:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        key, raw = item.split("=", 1)
        if key.startswith("model."):
            model[key[len("model."):]] = _parse_value(raw)
        else:
            changes[key] = _parse_value(raw)
    if "seed" in changes and "seed" not in model:
        model["seed"] = changes["seed"]
    return base.replace(model=model, **changes)


def cmd_synth(args) -> int:
    cfg = build_config(args)
    m = cfg.model
    total = args.train + args.val + args.test
    samples = synth_generate(SynthSpec(
        image_size=m.image_size, num_classes=m.num_classes, noise_sigma=cfg.noise_sigma,
        count=total, seed=cfg.seed,
    ))
    splits = {
        "train": range(args.train),
        "val": range(args.train, args.train + args.val),
        "test": range(args.train + args.val, total),
    }
    write_dataset(samples, args.out, splits)
    print(f"wrote {total} samples to {args.out}")
    return 0


def cmd_train(args, argv) -> int:
    cfg = build_config(args)
    result = train(cfg, cli_args=argv)
    last = result.record.epochs[-1] if result.record.epochs else None
    if last is not None:
        print(f"epochs {len(result.record.epochs)} steps {last.steps} loss {last.train_loss:.4f} "
              f"best val dice {result.record.best_val_dice:.4f} (epoch {result.record.best_epoch})")
    print(f"checkpoint: {result.checkpoint}")
    return 0


def cmd_eval(args) -> int:
    cfg = build_config(args)
    if args.data_dir or cfg.data_dir:
        samples = load_dataset(args.data_dir or cfg.data_dir, args.split, cfg.model.num_classes)
    else:
        train_set, val_set = prepare_data(cfg)
        samples = train_set if args.split == "train" else val_set
    rep = evaluate(args.checkpoint, samples, cfg.model, out=args.out, png_dir=args.png)
    print(rep.to_csv(), end="")
    return 0


def cmd_ablate(args) -> int:
    cfg = build_config(args)
    table = ablate(cfg, seeds=args.seeds)
    out = args.out or Path(cfg.output_dir) / "ablation.csv"
    table.save(out)
    print(table.to_csv(), end="")
    return 0


def cmd_gradcheck(args) -> int:
    result = gradcheck_suite()
    text = result.to_json()
    if args.out:
        Path(args.out).write_text(text)
    print(text)
    return 0 if result.passed else 4


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fifseg", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic NPY dataset")
    _add_config_args(p)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--train", type=int, default=18)
    p.add_argument("--val", type=int, default=12)
    p.add_argument("--test", type=int, default=0)

    p = sub.add_parser("train", help="train a model")
    _add_config_args(p)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    _add_config_args(p)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--split", default="val")
    p.add_argument("--out", type=Path, help="report path stem; writes .csv and .json")
    p.add_argument("--png", type=Path, help="directory for prediction/label overlays")

    p = sub.add_parser("ablate", help="train all 8 module toggle combinations")
    _add_config_args(p)
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    p.add_argument("--out", type=Path)

    p = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    p.add_argument("--out", type=Path)
    return parser


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        if args.command == "synth":
            return cmd_synth(args)
        if args.command == "train":
            return cmd_train(args, argv)
        if args.command == "eval":
            return cmd_eval(args)
        if args.command == "ablate":
            return cmd_ablate(args)
        return cmd_gradcheck(args)
    except FifsegError as exc:
        print(f"fifseg: error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
