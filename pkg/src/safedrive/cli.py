"""Command-line entry point: ``safedrive {train,evaluate,collect,train-rnn,export}``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import harness
from .config import ConfigError, load_config
from .neural import CheckpointError


def _densities(text: str) -> list[int]:
    try:
        values = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"densities must be comma-separated integers, got {text!r}")
    if not values:
        raise argparse.ArgumentTypeError("at least one density is required")
    return values


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="safedrive", description="Safe highway lane-change agent workflows")
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser, seed: bool = True) -> None:
        p.add_argument("--config", type=Path, default=None, help="YAML config; defaults apply when omitted")
        if seed:
            p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", type=Path, required=True, help="output directory")

    p = sub.add_parser("train", help="train one policy variant")
    common(p)
    p.add_argument("--variant", choices=["none", "handcrafted", "both"], required=True)
    p.add_argument("--episodes", type=int, default=None, help="override agent.episodes")
    p.add_argument("--rnn", type=Path, default=None, help="predictor checkpoint (variant 'both')")

    p = sub.add_parser("evaluate", help="greedy evaluation sweep over traffic densities")
    common(p)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--episodes", type=int, default=None, help="episodes per density (default eval.episodes)")
    p.add_argument("--densities", type=_densities, default=None, help="e.g. 2,4,6 (default eval.densities)")
    p.add_argument("--rnn", type=Path, default=None, help="also veto actions with the lookahead predictor")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--label", default=None, help="policy name in exported tables")

    p = sub.add_parser("collect", help="record driving data from a trained policy")
    common(p)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--episodes", type=int, default=100)

    p = sub.add_parser("train-rnn", help="fit the lookahead predictor on collected data")
    common(p)
    p.add_argument("--dataset", type=Path, required=True, help="dataset CSV or collect output directory")
    p.add_argument("--epochs", type=int, default=None)

    p = sub.add_parser("export", help="merge run outputs into tidy tables")
    p.add_argument("run_dir", type=Path)
    p.add_argument("--out", type=Path, default=None, help="defaults to run_dir")
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        if args.command == "export":
            for name, path in harness.cmd_export(args.run_dir, args.out).items():
                print(f"{name}: {path}")
            return 0
        cfg = load_config(args.config)
        if args.command == "train":
            man = harness.cmd_train(cfg, args.variant, args.seed, args.out, args.episodes, args.rnn)
        elif args.command == "evaluate":
            man = harness.cmd_evaluate(
                args.checkpoint,
                cfg,
                args.densities if args.densities is not None else cfg.eval.densities,
                args.episodes if args.episodes is not None else cfg.eval.episodes,
                args.seed,
                args.out,
                rnn_path=args.rnn,
                workers=args.workers,
                label=args.label,
            )
        elif args.command == "collect":
            man = harness.cmd_collect(args.checkpoint, cfg, args.episodes, args.seed, args.out)
        else:
            man = harness.cmd_train_rnn(args.dataset, cfg, args.seed, args.out, args.epochs)
    except (ConfigError, CheckpointError, harness.HarnessError, ValueError, OSError) as exc:
        print(f"safedrive: error: {exc}", file=sys.stderr)
        return 2
    print(f"{args.command} run {man.run_id}: {args.out / harness.MANIFEST}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
