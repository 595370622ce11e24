"""Load sweep from an experiment config; prints majority verdicts and the max stable load per policy.

    python3 scripts/load_sweep.py scripts/configs/topoA_sweep.json [--horizon N] [--workers W]

Per-run CSVs and sweep.json land in the config's ``out`` directory.
"""

from __future__ import annotations

import argparse
import sys
import time
from dataclasses import replace

from overlay_routing.harness import ExperimentConfig, run_sweep


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("config")
    ap.add_argument("--horizon", type=int)
    ap.add_argument("--workers", type=int)
    ap.add_argument("--out")
    args = ap.parse_args(argv)
    cfg = ExperimentConfig.from_file(args.config)
    cfg = replace(cfg, **{k: v for k, v in vars(args).items() if k != "config" and v is not None})
    start = time.perf_counter()
    res = run_sweep(cfg)
    for (pol, est, rho), verdict in sorted(res.majority().items()):
        print(f"{pol:12s} {est:18s} rho={rho:.2f} {verdict}")
    print()
    for pol in cfg.policies:
        for est in (cfg.estimators if pol == "oorp" else ("exact",)):
            print(f"max stable load {pol}/{est}: {res.max_stable(pol, est)}")
    print(f"lambda_max {res.lambda_max}; {len(res.points)} runs in {time.perf_counter() - start:.0f}s")
    return 0


if __name__ == "__main__":
    sys.exit(main())
