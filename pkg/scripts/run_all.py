#!/usr/bin/env python3
"""Run every shipped experiment config and write plot-ready CSVs next to the aggregates.

    python scripts/run_all.py [--only gsbf_sweep maxmin ...] [--out results]
"""

import argparse
import logging
import time
from pathlib import Path

from cranopt.harness import emit_plot_data, load_config, run

ROOT = Path(__file__).resolve().parent.parent
CONFIGS = ["gsbf_sweep", "gsbf_oracle", "maxmin", "chanest", "scenario", "bench_stuffing", "solve_lp"]


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--only", nargs="*", choices=CONFIGS, default=CONFIGS)
    p.add_argument("--out", default=str(ROOT / "results"))
    args = p.parse_args()
    logging.basicConfig(level=logging.WARNING)
    for name in args.only:
        cfg = load_config(ROOT / "configs" / f"{name}.json")
        t0 = time.perf_counter()
        res = run(cfg, Path(args.out) / name)
        if cfg.experiment != "solve_file":
            emit_plot_data(res.aggregate_csv, res.aggregate_csv.with_name(f"{cfg.experiment}_plot.csv"))
        print(f"{name:<15} {time.perf_counter() - t0:7.1f}s  {res.aggregate_csv}")


if __name__ == "__main__":
    main()
