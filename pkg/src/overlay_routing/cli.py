"""Command-line entry point: ``overlay-routing <verb> [flags]``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import lp
from .harness import (ArrivalSpec, ExperimentConfig, effective_capacity, oracle_lambda_max,
                      rate_control_experiment, run, run_sweep, single_queue_demo)
from .policies import ESTIMATORS, make_policy
from .topology import TopologyError, load_scenario, scenario_to_dict


def _config(args) -> ExperimentConfig:
    """Experiment config from ``--config`` (an experiment file or a topology file) plus flag overrides."""
    cfg = ExperimentConfig()
    if args.config:
        doc = json.loads(Path(args.config).read_text())
        cfg = ExperimentConfig(**doc) if "nodes" not in doc else ExperimentConfig(scenario=args.config)
    if getattr(args, "scenario", None):
        cfg = replace(cfg, scenario=args.scenario)
    overrides = {
        "seed": args.seed, "horizon": args.horizon, "out": args.out,
        "probe_interval": args.probe_interval, "frame_length": args.frame_length,
    }
    if args.policy:
        overrides["policies"] = tuple(args.policy)
    if args.estimator:
        overrides["estimators"] = tuple(args.estimator)
    return replace(cfg, **{k: v for k, v in overrides.items() if v is not None})


def _write(out: str | None, name: str, payload: dict) -> None:
    text = json.dumps(payload, indent=2, sort_keys=True)
    if out:
        Path(out).mkdir(parents=True, exist_ok=True)
        (Path(out) / name).write_text(text + "\n")
    print(text)


def cmd_sweep(args) -> int:
    cfg = _config(args)
    if args.load:
        cfg = replace(cfg, loads=tuple(args.load))
    res = run_sweep(cfg)
    for (pol, est, rho), verdict in sorted(res.majority().items()):
        label = pol if pol != "oorp" else f"oorp/{est}"
        print(f"{label:28s} rho={rho:.2f} {verdict}")
    if cfg.out:
        print(f"results in {cfg.out}")
    return 0


def cmd_run(args) -> int:
    cfg = _config(args)
    sc = cfg.load_scenario()
    lam_max = cfg.lam_max(sc)
    rho = args.load[0] if args.load else 0.9
    rates = {c.id: float(rho * m) for c, m in zip(sc.commodities, lam_max)}
    pol = make_policy(cfg.policies[0], cfg.estimators[0], cfg.probe_interval, cfg.idle_threshold,
                      cfg.frame_length)
    res = run(sc, pol, ArrivalSpec(rates, seed=cfg.seed), cfg.horizon, cfg.seed)
    summary = res.summary() | {"load": rho, "lambda_max": [float(x) for x in lam_max]}
    if cfg.out:
        Path(cfg.out).mkdir(parents=True, exist_ok=True)
        res.to_csv(Path(cfg.out) / "run.csv")
    _write(cfg.out, "summary.json", summary)
    return 0


def cmd_demo_queue(args) -> int:
    tau = args.tau
    demo = single_queue_demo(tau=tau, idle_threshold=args.idle_threshold)
    cols = ["slot", "actual", "delay", "actual_delay_probe", "delay_probe"]
    lines = [",".join(cols)] + [",".join(str(int(demo[c][t])) for c in cols) for t in range(len(demo["slot"]))]
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        (Path(args.out) / "queue_demo.csv").write_text("\n".join(lines) + "\n")
    for t in (tau, 2 * tau, 3 * tau):
        print(f"t={t}: actual={demo['actual'][t]} delay={demo['delay'][t]} "
              f"delay+probe={demo['delay_probe'][t]}")
    return 0


def cmd_rate_control(args) -> int:
    sc = load_scenario(args.config or "topoC")
    horizon = args.horizon or 200_000
    out = rate_control_experiment(sc, horizon, args.seed or 0, window=args.window,
                                  estimator=(args.estimator or ["exact"])[0])
    summary = {"scenario": sc.name, "horizon": horizon, "converged": out["converged"],
               "admitted_last_slot": out["admitted"]}
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        stride = max(1, len(out["moving_average"]) // 2000)
        rows = ["slot," + ",".join(f"rate_{c}" for c in out["commodities"])]
        for i in range(0, len(out["moving_average"]), stride):
            rows.append(f"{i + args.window}," + ",".join(f"{v:.6f}" for v in out["moving_average"][i]))
        (Path(args.out) / "rate_control.csv").write_text("\n".join(rows) + "\n")
    _write(args.out, "rate_control.json", summary)
    return 0


def cmd_oracle(args) -> int:
    sc = load_scenario(args.config or "topoA")
    payload = {"scenario": sc.name, "lambda_max": [float(x) for x in oracle_lambda_max(sc)]}
    if args.rates:
        lam = [float(x) for x in args.rates]
        sol = lp.fluid_feasibility_lp(sc, lam, effective_capacity(sc))
        payload["feasible"] = sol.feasible
    if sc.utilities:
        opt = lp.utility_optimum_oracle(sc, {u.commodity: u.weight for u in sc.utilities},
                                        {u.commodity: u.cap for u in sc.utilities}, effective_capacity(sc))
        payload["utility_optimum"] = {"rates": opt.rates, "utility": opt.utility}
    _write(args.out, "oracle.json", payload)
    return 0


def cmd_validate(args) -> int:
    try:
        sc = load_scenario(args.config or "topoA")
        sc.check_background()
    except (TopologyError, ValueError, KeyError) as exc:
        print(f"invalid: {exc}", file=sys.stderr)
        return 1
    print(f"{sc.name}: {len(sc.topology.nodes)} nodes, {len(sc.topology.links)} links, "
          f"{len(sc.tunnels)} tunnels")
    for t in sc.tunnels:
        print(f"  tunnel {t.id:3d} {'-'.join(t.path):30s} commodities {list(sc.usable[t.id])}")
    if args.out:
        _write(args.out, "topology.json", scenario_to_dict(sc))
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="overlay-routing", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="verb", required=True)

    def common(p, sim=True):
        p.add_argument("--config", help="experiment config JSON, topology JSON or fixture name")
        p.add_argument("--seed", type=int)
        p.add_argument("--horizon", type=int)
        p.add_argument("--out", help="output directory")
        if sim:
            p.add_argument("--scenario", help="fixture name or topology file (overrides the config)")
            p.add_argument("--policy", action="append", choices=["bp", "obp", "oorp", "centralized"])
            p.add_argument("--estimator", action="append", choices=list(ESTIMATORS))
            p.add_argument("--probe-interval", type=int)
            p.add_argument("--frame-length", type=int)
            p.add_argument("--load", type=float, action="append", help="load factor rho (repeatable)")

    p = sub.add_parser("sweep", help="load sweep with stability verdicts")
    common(p)
    p.set_defaults(fn=cmd_sweep)
    p = sub.add_parser("run", help="one simulation run")
    common(p)
    p.set_defaults(fn=cmd_run)
    p = sub.add_parser("demo-queue", help="single FIFO queue against its delay estimates")
    common(p, sim=False)
    p.add_argument("--tau", type=int, default=100)
    p.add_argument("--idle-threshold", type=int, default=10)
    p.set_defaults(fn=cmd_demo_queue)
    p = sub.add_parser("rate-control", help="utility-maximizing admission on top of OORP")
    common(p, sim=False)
    p.add_argument("--estimator", action="append", choices=list(ESTIMATORS))
    p.add_argument("--window", type=int, default=5000)
    p.set_defaults(fn=cmd_rate_control)
    p = sub.add_parser("oracle", help="max-flow scaling, feasibility and utility optimum")
    common(p, sim=False)
    p.add_argument("--rates", nargs="+", help="check fluid feasibility of this rate vector")
    p.set_defaults(fn=cmd_oracle)
    p = sub.add_parser("validate-topology", help="check a topology file and list its tunnels")
    common(p, sim=False)
    p.set_defaults(fn=cmd_validate)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    np.set_printoptions(precision=4)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
