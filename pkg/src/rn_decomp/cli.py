"""Command line front end: run one experiment, run the projector ablation,
or execute the invariant suite."""

from __future__ import annotations

import argparse
import sys

from . import __version__
from .experiment import run_ablation, run_experiment


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="rn-decomp",
        description="range-nullspace decomposition learning for linear inverse problems",
    )
    parser.add_argument("--version", action="version", version=f"rn-decomp {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="train and evaluate one mechanism from a config file")
    p_run.add_argument("config", help="path to a key = value config file")

    p_ablate = sub.add_parser(
        "ablate", help="train the four projector-ablation mechanisms on one dataset"
    )
    p_ablate.add_argument("config", help="path to a key = value config file")

    sub.add_parser("check", help="run the invariant suite and print pass/fail per property")

    args = parser.parse_args(argv)
    if args.command == "run":
        return run_experiment(args.config)
    if args.command == "ablate":
        return run_ablation(args.config)
    from .checks import run_all

    return 0 if run_all(verbose=True) else 1


if __name__ == "__main__":
    sys.exit(main())
