"""Command-line front end for the experiment runners.

One subcommand per experiment; each accepts the same four flags.  A
TOML config supplies the layout parameters, --seed and --out override
its seed and output directory, and the subcommand name decides which
experiment runs regardless of what the file says.  Exit codes: 0 on
success, 2 for configuration problems, 3 when the numerics fail (no
admissible star, ill-conditioned fit, quadrature breakdown, or a
failing condition report).
"""

from __future__ import annotations

import argparse
import logging
import sys

from .errors import (
    ConfigError,
    EmptyOmega,
    IllConditioned,
    QuadratureFailure,
    StarNotFound,
    UncoveredNode,
)
from .experiments import (
    EXPERIMENTS,
    ExperimentConfig,
    config_from_toml,
    run_experiment,
    with_overrides,
)

_NUMERICAL = (StarNotFound, IllConditioned, QuadratureFailure, EmptyOmega, UncoveredNode)

_HELP = {
    "table1": "centred error of the 2-D interpolant for the bump 1/(1+|x|^2)",
    "theta-scan": "partition deviation profile against the saturation curve",
    "qi-figures": "pointwise interpolation error profiles",
    "cubature-demo": "Gaussian-kernel cubature against the closed form",
    "check-conditions": "layout condition report for a perturbed grid",
    "theta-build": "build a partition and serialize its weight table",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gaussqi",
        description="quasi-interpolation experiments with Gaussian atoms",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in EXPERIMENTS:
        p = sub.add_parser(name, help=_HELP[name])
        p.add_argument("--config", metavar="FILE", help="TOML experiment configuration")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--out", default=None, help="override the output directory")
        p.add_argument("--quiet", action="store_true", help="suppress the result path")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.ERROR if args.quiet else logging.WARNING)
    try:
        cfg = config_from_toml(args.config) if args.config else ExperimentConfig()
        cfg = with_overrides(cfg, experiment=args.command, seed=args.seed, out=args.out)
        result = run_experiment(cfg)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except _NUMERICAL as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except ValueError as exc:
        # parameter validation inside the builders; still a config problem
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    if isinstance(result, tuple):
        path, report = result
        if not args.quiet:
            print(path)
        if not report.passed():
            print("layout conditions failed", file=sys.stderr)
            return 3
        return 0
    if not args.quiet:
        print(result)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
