"""Max stable load of OORP under each congestion estimator, found by bisection over a 0.05 grid.

    python3 scripts/estimator_sweep.py [--scenario topoB-sub] [--horizon 50000]
        [--intervals 10 20 50 100] [--backlog-load 0.9] [--out results/estimators.json]

Also reports the mean second-half backlog at ``--backlog-load`` for each
priority-probe interval. Use ``--scenario topoB-sub-bg`` for the run with
background traffic; loads are then relative to the reduced lambda_max.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from overlay_routing.harness import majority_verdict, oracle_lambda_max, search_max_stable
from overlay_routing.policies import DELAY, DELAY_PROBE, EXACT, OORP, PRIORITY, Estimator
from overlay_routing.topology import load_scenario


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--scenario", default="topoB-sub")
    ap.add_argument("--horizon", type=int, default=50_000)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--intervals", type=int, nargs="+", default=[10, 20, 50, 100])
    ap.add_argument("--idle-threshold", type=int, default=10)
    ap.add_argument("--backlog-load", type=float, default=0.9)
    ap.add_argument("--out")
    args = ap.parse_args(argv)

    sc = load_scenario(args.scenario)
    lam_max = oracle_lambda_max(sc)
    grid = [round(0.05 * i, 2) for i in range(1, 21)]
    configs = [(DELAY, 10), (DELAY_PROBE, 10), (EXACT, 10)] + [(PRIORITY, T) for T in args.intervals]
    rows = []
    for mode, interval in configs:
        def factory(mode=mode, interval=interval):
            return OORP(Estimator(mode, probe_interval=interval, idle_threshold=args.idle_threshold))

        best, seen = search_max_stable(sc, factory, lam_max, grid, args.seeds, args.horizon)
        row = {"estimator": mode, "probe_interval": interval, "max_stable_load": best,
               "verdicts": {f"{k:.2f}": v for k, v in sorted(seen.items())}}
        if mode == PRIORITY:
            _, runs = majority_verdict(sc, factory, lam_max, args.backlog_load, args.seeds, args.horizon)
            row["mean_backlog"] = float(np.mean([r.total_backlog[args.horizon // 2:].mean() for r in runs]))
        rows.append(row)
        extra = f" mean backlog at {args.backlog_load}: {row['mean_backlog']:.1f}" if "mean_backlog" in row else ""
        print(f"{mode:18s} interval {interval:4d}: max stable load {best}{extra}", flush=True)

    payload = {"scenario": sc.name, "lambda_max": lam_max.tolist(), "horizon": args.horizon,
               "seeds": args.seeds, "results": rows}
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(json.dumps(payload, indent=2) + "\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())
