"""Command-line entry point: ``sacm {generate,train,effects,analyze,report}``.

Exit codes: 0 success, 2 invalid input, 3 numerical failure, 4 I/O failure.
"""
from __future__ import annotations

import argparse
import logging
import sys

from . import pipeline
from .config import EFFECT_FAMILIES, load_config
from .errors import SACMError, ValidationError


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="sacm", description="Causal mediation of subject-verb agreement in a toy LM.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def add(name, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", help="experiment config file (defaults apply when omitted)")
        p.add_argument("--seed-override", type=int, help="replace every seed in the config")
        p.add_argument("--jobs", type=int, default=1, help="worker processes for mediator sweeps")
        p.add_argument("--resume", action="store_true",
                       help="continue from saved training state or finished sweep layers")
        return p

    add("generate", "write prompt sets and the training corpus")
    add("train", "train the toy model")
    p = add("effects", "compute effect tables")
    p.add_argument("--which", action="append", choices=EFFECT_FAMILIES,
                   help="effect family (repeatable; default: the config's list)")
    add("analyze", "contours, overlaps and hypothesis comparison")
    add("report", "render report.md")
    return ap


def main(argv: list[str] | None = None) -> int:
    try:
        args = _parser().parse_args(argv)
    except SystemExit as exc:  # argparse reports bad flags with status 2 already
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        config = load_config(args.config)
        if args.seed_override is not None:
            config = config.with_seed_override(args.seed_override)
        if args.jobs < 1:
            raise ValidationError("--jobs must be at least 1")
        if args.command == "generate":
            pipeline.cmd_generate(config)
        elif args.command == "train":
            pipeline.cmd_train(config, resume=args.resume)
        elif args.command == "effects":
            pipeline.cmd_effects(config, args.which, jobs=args.jobs, resume=args.resume)
        elif args.command == "analyze":
            pipeline.cmd_analyze(config)
        elif args.command == "report":
            print(pipeline.cmd_report(config))
    except SACMError as exc:
        print(f"sacm {args.command}: {exc}", file=sys.stderr)
        return exc.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
