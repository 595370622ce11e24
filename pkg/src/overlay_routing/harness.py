"""Experiment orchestration: runs, stability verdicts, load sweeps and demos."""

from __future__ import annotations

import csv
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from . import lp
from .engine import Network, SlotDecision
from .policies import (EXACT, OORP, Estimator, Policy, RateController, RateControllerConfig,
                       make_policy)
from .topology import BackgroundFlow, Commodity, Scenario, Topology, build_scenario, load_scenario

log = logging.getLogger(__name__)

POISSON = "poisson"
DETERMINISTIC = "deterministic"
NONE = "none"


@dataclass
class ArrivalSpec:
    """External arrivals at each commodity's source."""

    rates: Mapping[int, float]
    kind: str = POISSON
    seed: int = 0

    def __post_init__(self):
        if self.kind not in (POISSON, DETERMINISTIC, NONE):
            raise ValueError(f"unknown arrival distribution {self.kind!r}")
        if any(r < 0 for r in self.rates.values()):
            raise ValueError("arrival rates must be non-negative")


class _Sampler:
    """Chunked per-slot counts for a vector of rates; fixed seed gives a fixed path."""

    def __init__(self, rates: Sequence[float], kind: str, rng: np.random.Generator, chunk: int = 4096):
        self.rates = np.asarray(rates, dtype=float)
        self.kind = kind
        self.rng = rng
        self.chunk = chunk
        self.buf = None
        self.pos = chunk
        self.credit = np.zeros_like(self.rates)

    def next(self) -> list[int]:
        if self.kind == NONE or not self.rates.size:
            return [0] * self.rates.size
        if self.kind == DETERMINISTIC:
            self.credit += self.rates
            n = np.floor(self.credit + 1e-12)
            self.credit -= n
            return n.astype(int).tolist()
        if self.pos >= self.chunk:
            self.buf = self.rng.poisson(self.rates, size=(self.chunk, self.rates.size)).tolist()
            self.pos = 0
        row = self.buf[self.pos]
        self.pos += 1
        return row


@dataclass
class RunResult:
    scenario: str
    policy: str
    horizon: int
    seed: int
    total_backlog: np.ndarray
    commodity_backlog: np.ndarray
    delivered: np.ndarray
    arrived: np.ndarray
    network: Network | None = field(default=None, repr=False)
    extra: dict = field(default_factory=dict)

    @property
    def throughput(self) -> np.ndarray:
        return self.delivered / max(self.horizon, 1)

    def verdict(self, slope_threshold: float = 0.01, backlog_floor: float = 500.0) -> "StabilityVerdict":
        return classify(self.total_backlog, slope_threshold, backlog_floor)

    def to_csv(self, path: str | Path, stride: int = 1) -> None:
        cids = self.extra.get("commodities", list(range(self.commodity_backlog.shape[1])))
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["slot", "total_backlog"] + [f"backlog_{c}" for c in cids])
            for t in range(0, self.horizon, stride):
                w.writerow([t + 1, int(self.total_backlog[t])] +
                           [int(v) for v in self.commodity_backlog[t]])

    def summary(self) -> dict:
        v = self.verdict()
        h = self.horizon
        return {
            "scenario": self.scenario, "policy": self.policy, "horizon": h, "seed": self.seed,
            "mean_backlog_final_half": float(self.total_backlog[h // 2:].mean()) if h else 0.0,
            "throughput": self.throughput.tolist(),
            "delivered": self.delivered.tolist(),
            "arrived": self.arrived.tolist(),
            "slope": v.slope, "final_quarter_mean": v.final_mean, "verdict": v.verdict,
        }


@dataclass(frozen=True)
class StabilityVerdict:
    slope: float
    final_mean: float
    verdict: str

    @property
    def stable(self) -> bool:
        return self.verdict == "stable"


def backlog_slope(series: np.ndarray) -> float:
    """Least-squares slope (packets/slot) over the final half of ``series``."""
    h = len(series)
    tail = np.asarray(series[h // 2:], dtype=float)
    if tail.size < 2:
        return 0.0
    x = np.arange(tail.size, dtype=float)
    return float(np.polyfit(x, tail, 1)[0])


def classify(series: np.ndarray, slope_threshold: float = 0.01, backlog_floor: float = 500.0) -> StabilityVerdict:
    slope = backlog_slope(series)
    h = len(series)
    final = float(np.mean(series[h - h // 4:])) if h >= 4 else float(np.mean(series)) if h else 0.0
    unstable = slope > slope_threshold and final > backlog_floor
    return StabilityVerdict(slope, final, "unstable" if unstable else "stable")


def run(sc: Scenario, policy: Policy, arrivals: ArrivalSpec | None, horizon: int, seed: int | None = None,
        rate_controller: RateController | None = None, background_rates: Sequence[float] | None = None,
        detail: bool = False, check: bool = False,
        on_slot: Callable[[Network, object], None] | None = None) -> RunResult:
    """Simulate ``horizon`` slots and record the backlog trajectory.

    The arrival and background streams come from independent children of
    one seed sequence, so adding a zero-rate background flow leaves the
    arrival sample path unchanged.
    """
    seed = arrivals.seed if seed is None and arrivals is not None else (seed or 0)
    net = Network(sc, detail=detail)
    policy.bind(net)
    arr_rng, bg_rng = (np.random.Generator(np.random.PCG64(s))
                       for s in np.random.SeedSequence(seed).spawn(2))
    cids = [c.id for c in sc.commodities]
    if arrivals is not None:
        sampler = _Sampler([arrivals.rates.get(c, 0.0) for c in cids], arrivals.kind, arr_rng)
    else:
        sampler = None
    bg_rates = list(background_rates) if background_rates is not None else [f.rate for f in sc.background]
    bg_sampler = _Sampler(bg_rates, POISSON, bg_rng) if bg_rates else None

    hist: list[int] = []
    arrived, delivered = net.arrived, net.delivered
    K = len(cids)
    for t in range(horizon):
        decision = policy.decide(net)
        if rate_controller is not None:
            arr = rate_controller.admit(net)
        elif sampler is not None:
            arr = list(zip(cids, sampler.next()))
        else:
            arr = ()
        bg = bg_sampler.next() if bg_sampler is not None else ()
        trace = net.step(decision, arr, bg)
        policy.observe(net, trace)
        if check:
            net.check_invariants()
        if on_slot is not None:
            on_slot(net, trace)
        # conservation: everything that arrived and was not delivered is still queued
        hist.extend(arrived)
        hist.extend(delivered)
    h = np.array(hist, dtype=np.int64).reshape(horizon, 2, K)
    per = h[:, 0, :] - h[:, 1, :]
    total = per.sum(axis=1)
    return RunResult(sc.name, getattr(policy, "name", "policy"), horizon, seed, total, per,
                     np.array(net.delivered), np.array(net.arrived), net, {"commodities": cids})


# -- background traffic ------------------------------------------------

def apply_background(sc: Scenario, flows: Sequence[BackgroundFlow]) -> Scenario:
    """Scenario with extra uncontrolled flows injected into the underlay."""
    new = replace(sc, background=tuple(sc.background) + tuple(flows))
    new.check_background()
    return new


def effective_capacity(sc: Scenario) -> dict:
    """Link capacities left for the overlay after background flows take their rate."""
    cap = {e: float(c) for e, c in sc.topology.capacity.items()}
    for f in sc.background:
        for e in zip(f.path[:-1], f.path[1:]):
            cap[e] -= f.rate
    return cap


def oracle_lambda_max(sc: Scenario, direction: Sequence[float] | None = None) -> np.ndarray:
    """Max-flow scaling of ``direction`` (default all ones) under effective capacities."""
    d = np.ones(len(sc.commodities)) if direction is None else np.asarray(direction, dtype=float)
    theta = lp.max_scaling(sc, d, effective_capacity(sc))
    return theta * d


# -- sweeps ------------------------------------------------------------

@dataclass
class ExperimentConfig:
    scenario: str = "topoA"
    policies: Sequence[str] = ("oorp",)
    estimators: Sequence[str] = (EXACT,)
    loads: Sequence[float] = (0.5, 0.55, 0.6, 0.65, 0.7, 0.75, 0.8, 0.85, 0.9, 0.95, 1.0)
    lambda_max: Sequence[float] | None = None
    horizon: int = 200_000
    replications: int = 3
    seed: int = 0
    probe_interval: int = 10
    idle_threshold: int = 10
    frame_length: int = 100
    background: Sequence[dict] = ()
    use_fixture_background: bool = True
    slope_threshold: float = 0.01
    backlog_floor: float = 500.0
    out: str | None = None
    workers: int = 1

    def __post_init__(self):
        for rho in self.loads:
            if not 0 <= rho <= 1:
                raise ValueError(f"load {rho} outside [0, 1]")
        if self.horizon < 1:
            raise ValueError("horizon must be positive")

    @classmethod
    def from_file(cls, path: str | Path) -> "ExperimentConfig":
        doc = json.loads(Path(path).read_text())
        return cls(**doc)

    def load_scenario(self) -> Scenario:
        sc = load_scenario(self.scenario)
        if not self.use_fixture_background:
            sc = replace(sc, background=())
        if self.background:
            sc = apply_background(sc, [BackgroundFlow(tuple(str(n) for n in f["path"]), float(f["rate"]))
                                       for f in self.background])
        return sc

    def lam_max(self, sc: Scenario) -> np.ndarray:
        if self.lambda_max is not None:
            return np.asarray(self.lambda_max, dtype=float)
        if sc.lambda_max is not None and not sc.background:
            return np.asarray(sc.lambda_max, dtype=float)
        return oracle_lambda_max(sc)


@dataclass
class SweepPoint:
    policy: str
    estimator: str
    load: float
    seed: int
    slope: float
    final_mean: float
    verdict: str
    mean_backlog: float
    throughput: list[float]
    error: str | None = None


def _run_point(args) -> tuple[SweepPoint, RunResult | None]:
    cfg, sc, lam_max, policy_name, estimator, rho, seed = args
    try:
        pol = make_policy(policy_name, estimator, cfg.probe_interval, cfg.idle_threshold, cfg.frame_length)
        rates = {c.id: float(rho * l) for c, l in zip(sc.commodities, lam_max)}
        res = run(sc, pol, ArrivalSpec(rates, POISSON, seed), cfg.horizon, seed)
        v = res.verdict(cfg.slope_threshold, cfg.backlog_floor)
        res.network = None
        pt = SweepPoint(policy_name, estimator, rho, seed, v.slope, v.final_mean, v.verdict,
                        float(res.total_backlog[cfg.horizon // 2:].mean()), res.throughput.tolist())
        return pt, res
    except Exception as exc:  # a failed point is recorded, the sweep goes on
        log.exception("sweep point failed")
        return SweepPoint(policy_name, estimator, rho, seed, float("nan"), float("nan"), "error",
                          float("nan"), [], repr(exc)), None


@dataclass
class SweepResult:
    config: ExperimentConfig
    lambda_max: list[float]
    points: list[SweepPoint]

    def majority(self) -> dict[tuple[str, str, float], str]:
        """Majority verdict over replications, keyed by (policy, estimator, load)."""
        votes: dict = {}
        for p in self.points:
            votes.setdefault((p.policy, p.estimator, p.load), []).append(p.verdict)
        out = {}
        for key, vs in votes.items():
            out[key] = "unstable" if vs.count("unstable") * 2 > len(vs) else "stable"
        return out

    def max_stable(self, policy: str, estimator: str = EXACT) -> float | None:
        """Largest load below which every grid point is stable."""
        maj = self.majority()
        best = None
        for rho in sorted(self.config.loads):
            if maj.get((policy, estimator, rho)) != "stable":
                break
            best = rho
        return best

    def to_json(self) -> dict:
        return {"config": asdict(self.config), "lambda_max": self.lambda_max,
                "points": [asdict(p) for p in self.points],
                "majority": [{"policy": k[0], "estimator": k[1], "load": k[2], "verdict": v}
                             for k, v in sorted(self.majority().items())]}


def _label(policy: str, estimator: str) -> str:
    return policy if policy != "oorp" else f"oorp-{estimator}"


def run_sweep(cfg: ExperimentConfig, keep_runs: bool = False) -> SweepResult:
    """Run every (policy, estimator, load, seed) point; results are keyed, not ordered."""
    sc = cfg.load_scenario()
    lam_max = cfg.lam_max(sc)
    jobs = []
    for pol in cfg.policies:
        ests = cfg.estimators if pol == "oorp" else (EXACT,)
        for est in ests:
            for rho in cfg.loads:
                for r in range(cfg.replications):
                    jobs.append((cfg, sc, lam_max, pol, est, rho, cfg.seed + r))
    if cfg.workers > 1:
        with ProcessPoolExecutor(cfg.workers) as ex:
            outputs = list(ex.map(_run_point, jobs))
    else:
        outputs = [_run_point(j) for j in jobs]
    points = sorted((o[0] for o in outputs), key=lambda p: (p.policy, p.estimator, p.load, p.seed))
    result = SweepResult(cfg, [float(x) for x in lam_max], points)
    if cfg.out:
        out = Path(cfg.out)
        out.mkdir(parents=True, exist_ok=True)
        for pt, res in outputs:
            if res is not None:
                res.to_csv(out / f"{_label(pt.policy, pt.estimator)}_rho{pt.load:.2f}_seed{pt.seed}.csv",
                           stride=max(1, cfg.horizon // 2000))
        (out / "sweep.json").write_text(json.dumps(result.to_json(), indent=2, sort_keys=True))
    if keep_runs:
        result.runs = {(o[0].policy, o[0].estimator, o[0].load, o[0].seed): o[1] for o in outputs}
    return result


def majority_verdict(sc: Scenario, policy_factory: Callable[[], Policy], lam_max: Sequence[float],
                     rho: float, seeds: Sequence[int], horizon: int,
                     slope_threshold: float = 0.01, backlog_floor: float = 500.0) -> tuple[str, list[RunResult]]:
    """Majority verdict of one load point over ``seeds``; the runs are returned too."""
    runs = []
    for seed in seeds:
        rates = {c.id: float(rho * m) for c, m in zip(sc.commodities, lam_max)}
        res = run(sc, policy_factory(), ArrivalSpec(rates, POISSON, seed), horizon, seed)
        res.network = None
        runs.append(res)
    bad = sum(not r.verdict(slope_threshold, backlog_floor).stable for r in runs)
    return ("unstable" if 2 * bad > len(runs) else "stable"), runs


def search_max_stable(sc: Scenario, policy_factory: Callable[[], Policy], lam_max: Sequence[float],
                      grid: Sequence[float], seeds: Sequence[int], horizon: int,
                      **verdict_kw) -> tuple[float | None, dict[float, str]]:
    """Largest grid load with a stable majority verdict, found by bisection.

    Assumes stability is monotone in the load, so only about log2(len(grid))
    points are simulated. Returns the load (None if even the lowest point is
    unstable) and the verdicts that were actually computed.
    """
    grid = sorted(grid)
    seen: dict[float, str] = {}

    def stable(i: int) -> bool:
        if grid[i] not in seen:
            seen[grid[i]] = majority_verdict(sc, policy_factory, lam_max, grid[i], seeds, horizon,
                                             **verdict_kw)[0]
        return seen[grid[i]] == "stable"

    if stable(len(grid) - 1):
        return grid[-1], seen
    if not stable(0):
        return None, seen
    lo, hi = 0, len(grid) - 1  # grid[lo] stable, grid[hi] unstable
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if stable(mid):
            lo = mid
        else:
            hi = mid
    return grid[lo], seen


# -- single-queue estimator demo ---------------------------------------

class _SendAll(Policy):
    """Pushes every queued packet into the one tunnel as fast as its first link allows."""

    name = "send-all"

    def __init__(self, estimator: Estimator):
        self.estimator = estimator
        self._probes = []

    def bind(self, net):
        super().bind(net)
        self.estimator.bind(net, [0])
        return self

    def decide(self, net):
        cap = net.first_cap[net.t_first[0]]
        self._probes = self.estimator.probes(net.t)
        n = min(cap, net.Q[net.t_src[0]][0])
        return SlotDecision([(0, net.commodities[0].id, n)] if n else [], list(self._probes))

    def observe(self, net, trace):
        self.estimator.update(trace, self._probes)


def single_queue_scenario(arrival_rate: int = 2, service: int = 1) -> Scenario:
    nodes = {"s": "overlay", "u": "underlay", "d": "overlay"}
    cap = {("s", "u"): arrival_rate, ("u", "d"): service}
    topo = Topology(nodes, cap, {("u", "d"): "d"}, name="single-queue")
    return build_scenario(topo, [Commodity(1, "s", "d")])


def single_queue_demo(tau: int = 100, idle_threshold: int = 10, slots: int | None = None) -> dict[str, np.ndarray]:
    """Actual backlog of one FIFO queue against its delay-based estimates.

    The source hands the queue two packets per slot in slots ``0..tau-1``
    and nothing afterwards; the queue serves one per slot. Entry ``t`` of
    each array is the value after ``t`` slots (entry 0 is the empty start).
    ``actual_delay_probe`` is the queue length in the probing run, where
    the empty probes hold FIFO positions too.
    """
    slots = 3 * tau if slots is None else slots
    sc = single_queue_scenario()
    out = {"slot": np.arange(slots + 1)}
    for key, mode in (("delay", "delay"), ("delay_probe", "delay+empty-probe")):
        est = Estimator(mode, idle_threshold=idle_threshold)
        pol = _SendAll(est)
        net = Network(sc)
        pol.bind(net)
        # packets handed over before slot t is decided are injected in slot t
        net.add_arrivals("s", 1, 2)
        actual, estimate = [0], [0]
        for t in range(slots):
            trace = net.step(pol.decide(net), [(1, 2)] if t + 1 < tau else [])
            pol.observe(net, trace)
            actual.append(net.link_backlog(("u", "d")))
            estimate.append(est.value[0])
        out[f"actual_{key}"] = np.array(actual)
        out[key] = np.array(estimate)
    out["actual"] = out["actual_delay"]
    return out


# -- rate control ------------------------------------------------------

def rate_control_experiment(sc: Scenario, horizon: int = 200_000, seed: int = 0, window: int = 5000,
                            estimator: str = EXACT, configs: Sequence[RateControllerConfig] | None = None) -> dict:
    """OORP routing with utility-maximizing admission at each source.

    Returns the per-slot moving-average delivered rate (``window`` slots),
    the converged rates (average over the final window) and the admitted
    rates chosen in the last slot.
    """
    if configs is None:
        configs = [RateControllerConfig(u.commodity, u.weight, u.cap) for u in sc.utilities]
    if not configs:
        raise ValueError("no utility configuration for rate control")
    rc = RateController(list(configs))
    cids = [c.id for c in sc.commodities]
    delivered = np.zeros((horizon + 1, len(cids)), dtype=np.int64)

    def on_slot(net, trace):
        delivered[net.t] = net.delivered

    res = run(sc, OORP(Estimator(estimator)), None, horizon, seed, rate_controller=rc, on_slot=on_slot)
    w = min(window, horizon)
    moving = (delivered[w:] - delivered[:-w]) / w
    converged = (delivered[-1] - delivered[-1 - w]) / w
    return {"commodities": cids, "moving_average": moving, "converged": dict(zip(cids, converged.tolist())),
            "admitted": dict(rc.rates), "result": res}
