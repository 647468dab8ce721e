"""Command line: ``cranopt <experiment> --config PATH [--seed-offset N] [--out DIR]``.

Also ``cranopt solve PROGRAM.json`` for a single cone program and
``cranopt plot-data AGGREGATE.csv --out PLOT.csv`` for figure-ready pivots.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .harness import EXPERIMENTS, ConfigError, SolverParams, emit_plot_data, load_config, run, solve_file


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cranopt", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    for name in EXPERIMENTS:
        e = sub.add_parser(name, help=f"run the {name} experiment")
        e.add_argument("--config", required=True, help="experiment JSON config or run manifest")
        e.add_argument("--seed-offset", type=int, default=0)
        e.add_argument("--out", default=None, help="output directory (overrides the config)")
    s = sub.add_parser("solve", help="solve a cone-program JSON file")
    s.add_argument("program")
    s.add_argument("--eps", type=float, default=1e-4)
    s.add_argument("--max-iters", type=int, default=10000)
    s.add_argument("--full", action="store_true", help="print the full solution as JSON")
    d = sub.add_parser("plot-data", help="pivot an aggregate CSV into x/y/series rows")
    d.add_argument("aggregate")
    d.add_argument("--out", required=True)
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    if args.command == "solve":
        settings = SolverParams(eps=args.eps, max_iters=args.max_iters).settings()
        try:
            res = solve_file(args.program, settings)
        except (OSError, ValueError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 2
        if args.full:
            print(json.dumps(res, indent=2))
        else:
            print(f"status: {res['status']}")
            print(f"objective: {res['objective']}")
            print(f"iterations: {res['iterations']}")
        return 0
    if args.command == "plot-data":
        try:
            emit_plot_data(args.aggregate, args.out)
        except (OSError, ValueError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 2
        return 0
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        print(exc, file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    if cfg.experiment != args.command:
        print(f"{args.config}:1: config is for experiment {cfg.experiment!r}, not {args.command!r}", file=sys.stderr)
        return 2
    res = run(cfg, args.out, args.seed_offset)
    print(f"raw: {res.raw_csv}")
    print(f"aggregate: {res.aggregate_csv}")
    print(f"manifest: {res.manifest}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
