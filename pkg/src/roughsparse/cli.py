"""Command-line entry point: ``roughsparse <experiment> --out DIR``."""

from __future__ import annotations

import argparse
import logging
import sys

from .errors import RoughSparseError
from .lab import RUNNERS, ExperimentConfig, write_outputs

log = logging.getLogger("roughsparse")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="roughsparse", description="Numerical experiments for rough singular integrals.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="experiment", required=True)
    helps = {
        "lambda-sweep": "growth of M_{lam,T} weak-type quotients as lambda decreases",
        "eps-split": "L2 norm of the rough remainder and Dini constant of the smooth part",
        "sparse-check": "constructive sparse domination on random pairs",
        "weak-norm": "empirical L1 -> weak L1 quotients of T and its maximal operators",
    }
    for name in RUNNERS:
        p = sub.add_parser(name, help=helps[name])
        p.add_argument("--config", help="JSON file overriding the default parameters")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=None, help="seed for the test functions")
        p.add_argument("--threads", type=int, default=1, help="worker threads")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    if args.seed is not None and not (0 <= args.seed < 2**64):
        print("error: --seed must be an unsigned 64-bit integer", file=sys.stderr)
        return 2
    if args.threads < 1:
        print("error: --threads must be positive", file=sys.stderr)
        return 2
    try:
        if args.config:
            cfg = ExperimentConfig.from_file(args.experiment, args.config, args.seed)
        else:
            cfg = ExperimentConfig.build(args.experiment, seed=args.seed)
        log.info("running %s", args.experiment)
        res = RUNNERS[args.experiment](cfg, threads=args.threads)
        write_outputs(args.experiment, res, args.out)
    except RoughSparseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    for name, ok in sorted(res.checks.items()):
        print(f"{'PASS' if ok else 'FAIL'} {name}")
    return 0 if res.passed else 1


if __name__ == "__main__":
    sys.exit(main())
