"""Utility-maximizing admission on topoC, compared with the LP utility optimum.

    python3 scripts/rate_control.py [--horizon 200000] [--window 50000] [--seeds 0 1 2]
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from overlay_routing import lp
from overlay_routing.harness import effective_capacity, rate_control_experiment
from overlay_routing.topology import load_scenario


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--scenario", default="topoC")
    ap.add_argument("--horizon", type=int, default=200_000)
    ap.add_argument("--window", type=int, default=50_000)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0])
    args = ap.parse_args(argv)
    sc = load_scenario(args.scenario)
    weights = {u.commodity: u.weight for u in sc.utilities}
    caps = {u.commodity: u.cap for u in sc.utilities}
    opt = lp.utility_optimum_oracle(sc, weights, caps, effective_capacity(sc), tol=1e-8)
    print(f"oracle rates {opt.rates} utility {opt.utility:.4f}")
    for seed in args.seeds:
        out = rate_control_experiment(sc, args.horizon, seed, window=args.window)
        got = out["converged"]
        utility = sum(weights[k] * np.log(got[k]) for k in weights)
        err = max(abs(got[k] - opt.rates[k]) for k in opt.rates)
        print(f"seed {seed}: rates { {k: round(v, 4) for k, v in got.items()} } "
              f"max error {err:.4f} utility {utility:.4f} "
              f"({abs(utility - opt.utility) / abs(opt.utility):.2%} from optimum)")
    return 0


if __name__ == "__main__":
    sys.exit(main())
