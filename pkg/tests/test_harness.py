import json
from dataclasses import replace

import numpy as np
import pytest

from conftest import make_scenario
from overlay_routing import lp
from overlay_routing.harness import (ArrivalSpec, ExperimentConfig, apply_background, classify,
                                     oracle_lambda_max, rate_control_experiment, run, run_sweep,
                                     single_queue_demo)
from overlay_routing.policies import OORP, RateControllerConfig, make_policy
from overlay_routing.topology import BackgroundFlow, TopologyError, load_scenario


def test_classify_rules():
    t = np.arange(10_000, dtype=float)
    assert classify(t * 0.5).verdict == "unstable"
    assert classify(t * 0.005).verdict == "stable"  # slope below threshold
    assert classify(np.full(10_000, 800.0)).verdict == "stable"  # flat
    low = classify(t * 0.02)  # growing, but the final quarter stays under the floor
    assert low.slope > 0.01 and low.final_mean < 500 and low.verdict == "stable"
    small = classify(t * 0.02, backlog_floor=1e9)
    assert small.verdict == "stable" and small.slope == pytest.approx(0.02)


def test_zero_load_stays_empty(topo_a):
    res = run(topo_a, OORP(), ArrivalSpec({1: 0, 2: 0, 3: 0}), 2000, check=True)
    assert not res.total_backlog.any()
    assert res.verdict().stable


def test_same_seed_same_result(topo_b):
    a = run(topo_b, make_policy("oorp", "priority-probe"), ArrivalSpec({1: 1.5, 2: 1.5}, seed=5), 3000)
    b = run(topo_b, make_policy("oorp", "priority-probe"), ArrivalSpec({1: 1.5, 2: 1.5}, seed=5), 3000)
    c = run(topo_b, make_policy("oorp", "priority-probe"), ArrivalSpec({1: 1.5, 2: 1.5}, seed=6), 3000)
    assert np.array_equal(a.total_backlog, b.total_backlog)
    assert np.array_equal(a.commodity_backlog, b.commodity_backlog)
    assert not np.array_equal(a.total_backlog, c.total_backlog)


def test_backlog_series_matches_network_state(topo_a):
    res = run(topo_a, make_policy("obp"), ArrivalSpec({1: .8, 2: .8, 3: .8}, seed=1), 1500, check=True)
    assert res.total_backlog[-1] == res.network.total_backlog()
    assert list(res.commodity_backlog[-1]) == res.network.commodity_backlog()


def test_deterministic_arrivals():
    sc = make_scenario({"a": "overlay", "b": "overlay"}, [("a", "b", 5)], [(1, "a", "b")])
    res = run(sc, make_policy("bp"), ArrivalSpec({1: 0.5}, kind="deterministic"), 10)
    assert res.arrived.tolist() == [5]


def test_arrival_spec_validation():
    with pytest.raises(ValueError):
        ArrivalSpec({1: -1.0})
    with pytest.raises(ValueError):
        ArrivalSpec({1: 1.0}, kind="bursty")


def test_csv_and_summary(tmp_path, topo_a):
    res = run(topo_a, OORP(), ArrivalSpec({1: .5, 2: .5, 3: .5}, seed=1), 100)
    res.to_csv(tmp_path / "r.csv")
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert lines[0] == "slot,total_backlog,backlog_1,backlog_2,backlog_3"
    assert len(lines) == 101
    s = res.summary()
    assert set(s) >= {"mean_backlog_final_half", "throughput", "slope", "verdict"}


# -- background ---------------------------------------------------------------

def unit_link():
    return make_scenario({"a": "overlay", "u": "underlay", "b": "overlay"}, [("a", "u", 1), ("u", "b", 1)],
                         [(1, "a", "b")])


def test_background_halves_unit_link():
    sc = apply_background(unit_link(), [BackgroundFlow(("u", "b"), 0.5)])
    assert oracle_lambda_max(sc)[0] == pytest.approx(0.5)
    below = run(sc, OORP(), ArrivalSpec({1: 0.45}, seed=3), 40_000)
    above = run(sc, OORP(), ArrivalSpec({1: 0.6}, seed=3), 40_000)
    assert below.verdict().stable and below.network.link_backlog(("u", "b")) < 200
    assert below.throughput[0] == pytest.approx(0.45, abs=0.02)
    # past the leftover capacity the shared queue diverges
    assert above.network.link_backlog(("u", "b")) + above.total_backlog[-1] > 2000


def test_zero_rate_background_changes_nothing(topo_b):
    bg = apply_background(topo_b, [BackgroundFlow(("7", "5", "6"), 0.0)])
    a = run(topo_b, OORP(), ArrivalSpec({1: 1.5, 2: 1.5}, seed=9), 2000)
    b = run(bg, OORP(), ArrivalSpec({1: 1.5, 2: 1.5}, seed=9), 2000)
    assert np.array_equal(a.total_backlog, b.total_backlog)


def test_background_path_must_follow_routes(topo_b):
    with pytest.raises(TopologyError):
        apply_background(topo_b, [BackgroundFlow(("5", "7", "10", "11"), 0.1)])
    with pytest.raises(TopologyError):
        apply_background(topo_b, [BackgroundFlow(("7", "6"), 0.1)])


def test_background_reduces_oracle(topo_b):
    bg = load_scenario("topoB-sub-bg")
    full, reduced = oracle_lambda_max(topo_b), oracle_lambda_max(bg)
    assert np.all(reduced < full - 1e-6)
    assert list(reduced) == pytest.approx(bg.lambda_max)


# -- sweeps -------------------------------------------------------------------

def small_cfg(tmp_path=None, **kw):
    base = dict(scenario="topoA", policies=("oorp",), loads=(0.5, 0.7, 0.9), horizon=10_000,
                replications=1, seed=0)
    base.update(kw)
    if tmp_path is not None:
        base["out"] = str(tmp_path)
    return ExperimentConfig(**base)


def test_sweep_bytes_deterministic(tmp_path):
    names = ("oorp-exact_rho0.60_seed0.csv", "sweep.json")
    run_sweep(small_cfg(tmp_path, loads=(0.6,), horizon=3000))
    first = [(tmp_path / n).read_bytes() for n in names]
    run_sweep(small_cfg(tmp_path, loads=(0.6,), horizon=3000))
    assert first == [(tmp_path / n).read_bytes() for n in names]


def test_sweep_zero_load_all_stable():
    res = run_sweep(small_cfg(policies=("bp", "obp", "oorp"), loads=(0.0,), horizon=2000))
    assert set(res.majority().values()) == {"stable"}
    assert all(p.mean_backlog == 0 for p in res.points)


def test_sweep_failures_are_recorded():
    res = run_sweep(small_cfg(policies=("oorp", "nonsense"), loads=(0.5,), horizon=500))
    verdicts = {p.policy: p.verdict for p in res.points}
    assert verdicts == {"oorp": "stable", "nonsense": "error"}


def test_oorp_verdicts_monotone_and_oracle_consistent(topo_a):
    loads = (0.5, 0.6, 0.7, 0.8, 0.9, 0.95)
    res = run_sweep(small_cfg(loads=loads, horizon=20_000))
    maj = res.majority()
    seq = [maj[("oorp", "exact", r)] for r in loads]
    for i, v in enumerate(seq):
        if v == "stable":
            assert all(x == "stable" for x in seq[:i])
            assert lp.fluid_feasibility_lp(topo_a, [loads[i]] * 3).feasible


def test_config_validation_and_file(tmp_path):
    with pytest.raises(ValueError):
        ExperimentConfig(loads=(1.2,))
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"scenario": "topoB-sub", "policies": ["oorp"], "horizon": 1000}))
    cfg = ExperimentConfig.from_file(path)
    assert cfg.lam_max(cfg.load_scenario()).tolist() == [2.0, 2.0]
    bgcfg = replace(cfg, scenario="topoB-sub-bg")
    assert bgcfg.lam_max(bgcfg.load_scenario()).tolist() == pytest.approx([1.5, 1.5])


# -- demos ----------------------------------------------------------------------

def test_single_queue_demo_shape():
    d = single_queue_demo(tau=100)
    assert d["actual"][100] == 100 and d["actual"][200] == 0
    assert d["delay"][100] == 50 and d["delay"][200] == 100
    assert d["delay"][300] == 100 and d["delay_probe"][300] == 0


def test_rate_control_single_path():
    out = rate_control_experiment(unit_link(), horizon=30_000, window=10_000,
                                  configs=[RateControllerConfig(1, 20.0, 20.0)])
    assert out["converged"][1] == pytest.approx(1.0, abs=0.02)


def test_rate_control_symmetric_share():
    sc = make_scenario({"a": "overlay", "b": "overlay", "u": "underlay", "d": "overlay"},
                       [("a", "u", 1), ("b", "u", 1), ("u", "d", 1)], [(1, "a", "d"), (2, "b", "d")])
    out = rate_control_experiment(sc, horizon=40_000, window=10_000,
                                  configs=[RateControllerConfig(k, 20.0, 20.0) for k in (1, 2)])
    assert out["converged"][1] == pytest.approx(0.5, abs=0.05)
    assert out["converged"][2] == pytest.approx(0.5, abs=0.05)
