"""Command-line entry point: ``robosac <experiment> [options]``.

Exit status is 0 when every check of the experiment passes, 1 when one
fails and 2 when the configuration cannot be used.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from robosac.engine import ConfigError
from robosac.experiments import EXPERIMENTS, ExperimentSpec, default_spec, write_result
from robosac.sampling import SamplingError

EXIT_OK, EXIT_FAILED, EXIT_CONFIG = 0, 1, 2


def _u64(text: str) -> int:
    value = int(text, 0)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError(f"seed must fit in 64 unsigned bits, got {text}")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="robosac", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="experiment", required=True, metavar="EXPERIMENT")
    for name, fn in EXPERIMENTS.items():
        p = sub.add_parser(name, help=(fn.__doc__ or "").splitlines()[0])
        p.add_argument("--config", type=Path, help="JSON experiment config")
        p.add_argument("--seed", type=_u64, help="seed for scenes and sampling (overrides the config file)")
        p.add_argument("--out", type=Path, help="output directory (default: output_path from the config file, else ./results)")
        p.add_argument("--repeats", type=int, help="repeats per configuration (overrides the config file)")
        p.add_argument("--workers", type=int, help="worker processes where supported")
        p.add_argument("--format", choices=("csv", "json"), default="csv")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def load_spec(args: argparse.Namespace) -> ExperimentSpec:
    if args.config is not None:
        data = json.loads(args.config.read_text())
        data.setdefault("name", args.experiment)
        spec = ExperimentSpec.from_dict(data)
    else:
        spec = default_spec(args.experiment)
    if args.seed is not None:
        spec = spec.with_seed(args.seed)
    if args.repeats is not None:
        spec = replace(spec, repeats=args.repeats)
    if args.workers is not None:
        spec = replace(spec, workers=args.workers)
    return spec


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        spec = load_spec(args)
        result = EXPERIMENTS[args.experiment](spec)
    except (OSError, json.JSONDecodeError, KeyError, TypeError, ValueError, ConfigError, SamplingError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = args.out or Path(spec.output_path or "results")
    for path in write_result(result, out, args.format):
        print(path)
    for check in result.checks:
        print(f"{'PASS' if check.passed else 'FAIL'}  {check.name}  {check.detail}")
    return EXIT_OK if result.passed else EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())
