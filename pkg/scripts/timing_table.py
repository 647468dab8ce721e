#!/usr/bin/env python3
"""Print a modeling-versus-solving timing table from a bench_stuffing raw CSV.

    cranopt bench_stuffing --config configs/bench_stuffing.json --out results/bench
    python scripts/timing_table.py results/bench/bench_stuffing_raw.csv
"""

import sys

from cranopt.harness import read_csv


def main(path):
    _, rows = read_csv(path)
    print(f"{'L=K':>5} {'template [s]':>13} {'scratch [s]':>12} {'speedup':>8} {'solve [s]':>10} {'power [W]':>10}")
    for r in rows:
        print(f"{r['L']:>5} {float(r['modeling_time_template_s']):13.2e} {float(r['modeling_time_scratch_s']):12.2e} "
              f"{float(r['speedup']):8.1f} {float(r['solving_time_s']):10.3f} {float(r['objective_w']):10.4g}")


if __name__ == "__main__":
    main(sys.argv[1])
