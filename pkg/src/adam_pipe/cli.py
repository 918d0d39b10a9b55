"""Command line entry point: ``adam-pipe {synth,train,infer,evaluate,report}``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .errors import ConfigError, PipelineError


def _add_config_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="YAML run config")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override one config field by dotted path, e.g. train.epochs=5 (repeatable)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="adam-pipe", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic fundus dataset and its manifest")
    p.add_argument("--n", type=int, default=32)
    p.add_argument("--resolution", type=int, default=256)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--holdout", type=int, default=0,
                   help="also write train.csv / test.csv with this many images held out")
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", help="train the task named in the config")
    _add_config_args(p)

    p = sub.add_parser("infer", help="write predictions for a manifest")
    _add_config_args(p)
    p.add_argument("--checkpoint", required=True, help="run directory, checkpoint directory or ensemble.json")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("evaluate", help="score a predictions directory against a manifest")
    _add_config_args(p)
    p.add_argument("--predictions", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("report", help="render figures for a run or evaluation directory")
    p.add_argument("--source", required=True)
    p.add_argument("--out", required=True)
    return parser


def _cmd_synth(args) -> None:
    from .synth import generate_samples, write_samples

    samples = generate_samples(args.n, args.resolution, args.seed)
    path = write_samples(samples, args.out)
    if args.holdout:
        if not 0 < args.holdout < args.n:
            raise ConfigError("--holdout must be between 1 and n - 1")
        write_samples(samples[:-args.holdout], args.out, "train.csv")
        write_samples(samples[-args.holdout:], args.out, "test.csv")
    print(path)


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    from . import config, pipeline

    if args.command == "synth":
        _cmd_synth(args)
    elif args.command == "train":
        cfg = config.load_config(args.config, args.overrides)
        print(pipeline.run_train(cfg))
    elif args.command == "infer":
        cfg = config.load_config(args.config, args.overrides)
        print(pipeline.run_infer(cfg, args.checkpoint, args.manifest, args.out))
    elif args.command == "evaluate":
        cfg = config.load_config(args.config, args.overrides)
        report = pipeline.run_evaluate(args.predictions, args.manifest, args.out, cfg)
        print(Path(args.out) / "report.json")
        for task, res in report["tasks"].items():
            print(task, {k: v for k, v in res.items() if not isinstance(v, list)})
    elif args.command == "report":
        for path in pipeline.run_report(args.source, args.out):
            print(path)
    return 0


def main(argv=None) -> int:
    try:
        return run(argv)
    except ConfigError as exc:
        print("config error:", file=sys.stderr)
        for problem in exc.problems:
            print(f"  - {problem}", file=sys.stderr)
        return exc.exit_code
    except PipelineError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    raise SystemExit(main())
