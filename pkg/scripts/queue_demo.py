"""Single FIFO queue: actual backlog against the delay and delay+empty-probe estimates.

    python3 scripts/queue_demo.py [--tau 100] [--idle-threshold 10] [--out results/queue_demo.csv]
"""

from __future__ import annotations

import argparse
import csv
import sys

from overlay_routing.harness import single_queue_demo

COLUMNS = ["slot", "actual", "delay", "actual_delay_probe", "delay_probe"]


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--tau", type=int, default=100)
    ap.add_argument("--idle-threshold", type=int, default=10)
    ap.add_argument("--out")
    args = ap.parse_args(argv)
    demo = single_queue_demo(args.tau, args.idle_threshold)
    rows = [[int(demo[c][t]) for c in COLUMNS] for t in range(len(demo["slot"]))]
    if args.out:
        with open(args.out, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(COLUMNS)
            w.writerows(rows)
    step = max(1, args.tau // 10)
    print(" ".join(f"{c:>18s}" for c in COLUMNS))
    for r in rows[::step]:
        print(" ".join(f"{v:18d}" for v in r))
    return 0


if __name__ == "__main__":
    sys.exit(main())
