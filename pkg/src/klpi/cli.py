"""Command-line entry point: ``klpi {run,bandit,check}``.

Exit codes: 0 success, 1 configuration or usage error, 2 numerical abort
(or I/O failure while writing metrics).
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import ConfigError, load_config
from .metrics import CsvSink

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad flags; usage errors map to 1 here
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="klpi", description="KL-regularized policy iteration experiments.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, text in (("run", "run the trainer described by a config file"),
                       ("bandit", "run the closed-form bandit optimizer")):
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", required=True, type=Path)
        p.add_argument("--seed", type=int)
        p.add_argument("--out-dir", type=Path,
                       help="write metrics.csv and checkpoints here (default: CSV to stdout)")
        p.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                       help="applied after the file is parsed; repeatable")
    p = sub.add_parser("check", help="run the built-in verification suite")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--instances", type=int, default=50)
    return parser


def _resolve(args):
    overrides = list(args.override)
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    if args.command == "bandit":
        overrides.append("mode=bandit")
    return load_config(args.config, overrides)


def _train(args) -> int:
    from .trainer import TrainingAborted, run

    cfg = _resolve(args)
    if args.out_dir is not None:
        args.out_dir.mkdir(parents=True, exist_ok=True)
        stream = open(args.out_dir / "metrics.csv", "w", encoding="utf-8", newline="\n")
    else:
        stream = sys.stdout
    sink = CsvSink(stream, cfg)
    try:
        run(cfg, sink, args.out_dir)
        sink.close()
    except TrainingAborted as exc:
        print(f"aborted: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    finally:
        if stream is not sys.stdout:
            stream.close()
    return EXIT_OK


def _check(args) -> int:
    from .checks import run_checks

    results = run_checks(args.seed, args.instances)
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.name}  ({r.detail})")
    return EXIT_OK if all(r.passed for r in results) else EXIT_NUMERIC


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        args = build_parser().parse_args(argv)
        if args.command == "check":
            return _check(args)
        return _train(args)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
