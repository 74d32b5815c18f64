"""Command-line entry point: ``liftedstruct {synth,train,eval,gradcheck}``.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
Configuration precedence is defaults < ``--config`` file < flags.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from .config import RunConfig
from .core import ValidationError
from .data import SplitSpec, class_disjoint_split, load_dataset, make_blobs, save_dataset, save_embeddings
from .gradcheck import gradient_check, random_check_case
from .losses import LOSS_NAMES
from .metrics import evaluate_embeddings
from .model import load_checkpoint, save_checkpoint
from .train import embed, train

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2

CHECKPOINT_NAME = "checkpoint.bin"
LOG_NAME = "train_log.csv"
CONFIG_NAME = "config.txt"
REPORT_NAME = "report.json"
RECALL_NAME = "recall.csv"

log = logging.getLogger("liftedstruct")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    """One ``--kebab-case`` flag per RunConfig field; unset flags do not override."""
    p.add_argument("--config", help="flat 'key = value' config file")
    for f in fields(RunConfig):
        flag = "--" + f.name.replace("_", "-")
        p.add_argument(flag, dest=f"cfg_{f.name}", default=None, metavar="VALUE",
                       help=f"RunConfig.{f.name}")


def _run_config(args) -> RunConfig:
    try:
        base = RunConfig()
        if args.config:
            try:
                text = Path(args.config).read_text(encoding="utf-8")
            except OSError as exc:
                raise UsageError(f"cannot read config file: {exc}") from None
            base = RunConfig.from_text(text, base)
        overrides = [f"{f.name} = {getattr(args, 'cfg_' + f.name)}" for f in fields(RunConfig)
                     if getattr(args, "cfg_" + f.name) is not None]
        cfg = RunConfig.from_text("\n".join(overrides), base) if overrides else base
        return cfg.validate()
    except ValidationError as exc:
        raise UsageError(str(exc)) from None


def _dataset_for(cfg: RunConfig):
    if not cfg.input_path:
        raise UsageError("no dataset given (use --input-path)")
    return load_dataset(cfg.input_path)


def _split(cfg: RunConfig, dataset):
    spec = SplitSpec(cfg.split_ordering, cfg.train_fraction_of_classes, cfg.data_seed)
    return class_disjoint_split(dataset, spec)


def _output_dir(cfg: RunConfig, fallback: str | None = None) -> Path:
    out = cfg.output_dir or fallback
    if not out:
        raise UsageError("no output directory given (use --output-dir)")
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


# ---------------------------------------------------------------------------
# subcommands


def cmd_synth(args) -> int:
    try:
        ds = make_blobs(args.classes, args.per_class, args.dim, args.center_scale, args.noise_sigma, args.seed)
    except ValidationError as exc:
        raise UsageError(str(exc)) from None
    save_dataset(ds, args.output)
    print(f"wrote {len(ds)} rows ({args.classes} classes x {args.per_class}, dim {args.dim}) to {args.output}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _run_config(args)
    out = _output_dir(cfg)
    dataset = _dataset_for(cfg)
    train_ds, _ = _split(cfg, dataset)
    result = train(cfg, train_ds)
    save_checkpoint(out / CHECKPOINT_NAME, result.spec, result.params)
    (out / LOG_NAME).write_text(result.log_csv(cfg.log_wall_time), encoding="utf-8")
    (out / CONFIG_NAME).write_text(cfg.to_text(), encoding="utf-8")
    final = result.losses[-1] if result.losses else float("nan")
    print(f"trained {len(result.losses)} iterations on {len(train_ds)} rows, final loss {final:.6g}; outputs in {out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _run_config(args)
    if not args.checkpoint:
        raise UsageError("eval needs --checkpoint")
    spec, params = load_checkpoint(args.checkpoint)
    dataset = _dataset_for(cfg)
    if spec.input_dim != dataset.dim:
        raise ValidationError(f"checkpoint expects {spec.input_dim} input features, dataset has {dataset.dim}")
    _, test_ds = _split(cfg, dataset)
    emb = embed(spec, params, test_ds.features)
    report = evaluate_embeddings(emb, test_ds.labels, ks=cfg.eval_ks, seed=cfg.data_seed, config=cfg.to_dict())
    out = _output_dir(cfg, str(Path(args.checkpoint).parent))
    (out / REPORT_NAME).write_text(report.to_json() + "\n", encoding="utf-8")
    report.write_recall_csv(out / RECALL_NAME)
    if args.export_embeddings:
        save_embeddings(args.export_embeddings, emb, test_ds.labels)
    recall = " ".join(f"R@{k}={v:.4f}" for k, v in sorted(report.recall_at.items()))
    print(f"{recall} NMI={report.nmi:.4f} F1={report.f1:.4f} ({report.num_items} items, {report.num_classes} classes)")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    losses = LOSS_NAMES if args.loss == "all" else (args.loss,)
    rng = np.random.default_rng(args.seed)
    failures = 0
    for loss in losses:
        for _ in range(args.trials):
            inputs, labels, spec, params = random_check_case(loss, rng)
            rep = gradient_check(loss, inputs, labels, spec, params, tolerance=args.tolerance, rng=rng)
            print(rep.line())
            failures += rep.status == "fail"
    print(f"{failures} failure(s)")
    return EXIT_RUNTIME if failures else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="liftedstruct", description="Metric-learning losses, training and evaluation on vectors.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="write a Gaussian-blob dataset as CSV")
    p.add_argument("--classes", type=int, default=20)
    p.add_argument("--per-class", type=int, default=10)
    p.add_argument("--dim", type=int, default=8)
    p.add_argument("--center-scale", type=float, default=1.0)
    p.add_argument("--noise-sigma", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output", "-o", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train on the train half of a class-disjoint split")
    _add_config_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on the test half")
    _add_config_flags(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--export-embeddings", help="also write test embeddings as label,e0,... CSV")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference check of every loss through the network")
    p.add_argument("--loss", choices=("all",) + LOSS_NAMES, default="all")
    p.add_argument("--trials", type=int, default=10)
    p.add_argument("--tolerance", type=float, default=1e-5)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ValidationError, FloatingPointError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
