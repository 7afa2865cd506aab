"""Command-line entry point: ``killedsde {price,converge,benchmark-cache}``."""

from __future__ import annotations

import argparse
import sys
from dataclasses import fields
from pathlib import Path

from .errors import KilledSDEError
from .experiment import (ConvergenceReport, ExperimentConfig, compute_self_benchmarks,
                         format_csv, load_config, plot_data,
                         run_convergence, run_price)

CONFIG_HELP = """\
config file: one "key = value" per line, '#' starts a comment. Keys are the
long flag names with '-' or '_' (scheme and n-steps take comma lists).
Command-line flags override the file. Keys:
  model, sigma, nu, beta, payoff, strike, lower-barrier, upper-barrier,
  maturity, s0, h, scheme, n-steps, paths, seed, series-terms, workers,
  solver, benchmark-n-steps, benchmark-paths, benchmark-cache, out, plot-data
"""


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    g = common.add_argument_group("experiment")
    g.add_argument("--config", help="flat key = value config file")
    g.add_argument("--model", choices=["bs", "hlv"], help="bs (Black-Scholes) or hlv (default bs)")
    g.add_argument("--sigma", type=float, help="Black-Scholes volatility (default 0.2)")
    g.add_argument("--nu", type=float, help="HLV level parameter (default 0.2)")
    g.add_argument("--beta", type=float, help="HLV skew parameter in (0, 1] (default 0.5)")
    g.add_argument("--payoff", choices=["put", "call"], help="default put")
    g.add_argument("--strike", type=float, help="default 1.0")
    g.add_argument("--lower-barrier", type=float, help="default 0.8")
    g.add_argument("--upper-barrier", type=float, help="omit for a single lower barrier")
    g.add_argument("--maturity", type=float, help="default 1.0")
    g.add_argument("--s0", type=float, help="spot (default 1.0)")
    g.add_argument("--h", choices=["quartic", "parabolic", "exp", "linear"],
                   help="transform for bem (default exp, quartic for two barriers, parabolic for hlv)")
    g.add_argument("--scheme", action="append", choices=["bem", "euler", "bridge"],
                   help="repeatable (default bem)")
    g.add_argument("--n-steps", action="append", type=int,
                   help="repeatable; default 2,4,...,256 (price uses the first)")
    g.add_argument("--paths", type=int, help="Monte Carlo paths (default 1000000)")
    g.add_argument("--seed", type=int, help="default 0")
    g.add_argument("--series-terms", type=int, help="image-series truncation (default 5)")
    g.add_argument("--workers", type=int, help="worker threads (default 1)")
    g.add_argument("--solver", choices=["newton", "bisection", "grid"],
                   help="implicit-step solver (default newton)")
    g.add_argument("--benchmark-n-steps", type=int, help="self-benchmark grid (default 4096)")
    g.add_argument("--benchmark-paths", type=int, help="self-benchmark paths (default 8000000)")
    g.add_argument("--benchmark-cache", help="self-benchmark cache file")
    g.add_argument("--out", help="write CSV here instead of stdout")
    g.add_argument("--plot-data", help="write (log N, log abs_error) pairs here")

    p = argparse.ArgumentParser(prog="killedsde", description=__doc__, epilog=CONFIG_HELP,
                                formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("price", parents=[common], help="price with each scheme at one step count",
                   epilog=CONFIG_HELP, formatter_class=argparse.RawDescriptionHelpFormatter)
    sub.add_parser("converge", parents=[common], help="convergence sweep with slope fits",
                   epilog=CONFIG_HELP, formatter_class=argparse.RawDescriptionHelpFormatter)
    bc = sub.add_parser("benchmark-cache", parents=[common],
                        help="compute and cache dense self-benchmarks",
                        epilog=CONFIG_HELP, formatter_class=argparse.RawDescriptionHelpFormatter)
    bc.add_argument("--extra-strike", type=float, action="append", default=[],
                    help="also benchmark these strikes on the same paths")
    bc.add_argument("--force", action="store_true", help="recompute even if cached")
    return p


def config_from_args(args: argparse.Namespace) -> ExperimentConfig:
    names = {f.name for f in fields(ExperimentConfig)}
    overrides = {k: v for k, v in vars(args).items() if k in names}
    if args.scheme:
        overrides["schemes"] = tuple(args.scheme)
    if args.n_steps:
        overrides["n_steps"] = tuple(args.n_steps)
    return load_config(args.config, overrides)


def _write(text: str, path) -> None:
    if path:
        Path(path).write_text(text)
    else:
        sys.stdout.write(text)


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        cfg = config_from_args(args)
        if args.command == "price":
            results = run_price(cfg)
            report = ConvergenceReport(rows=[r.row() for r in results])
            _write(format_csv(report), cfg.out)
        elif args.command == "converge":
            report = run_convergence(cfg)
            _write(format_csv(report), cfg.out)
            if cfg.plot_data:
                Path(cfg.plot_data).write_text(plot_data(report))
        else:
            strikes = [cfg.strike] + [k for k in args.extra_strike if k != cfg.strike]
            lines = ["scheme,strike,value,stderr"]
            for scheme in cfg.schemes:
                bench = compute_self_benchmarks(cfg, scheme, strikes, force=args.force)
                lines += [f"{scheme},{k!r},{b.value:.16e},{b.stderr:.16e}" for k, b in bench.items()]
            _write("\n".join(lines) + "\n", cfg.out)
    except KilledSDEError as exc:
        print(f"killedsde: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
