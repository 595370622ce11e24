"""Slotted-time simulation of routing over overlay networks built on fixed-route underlays."""

from .engine import CapacityViolation, Network, SlotDecision, SlotTrace, fifo_serve
from .harness import (ArrivalSpec, ExperimentConfig, RunResult, StabilityVerdict, classify,
                      majority_verdict, oracle_lambda_max, rate_control_experiment, run, run_sweep, search_max_stable,
                      single_queue_demo)
from .policies import (OORP, Backpressure, Centralized, Estimator, OverlayBackpressure,
                       RateController, RateControllerConfig, make_policy, rate_control_choose)
from .topology import (Commodity, Scenario, Topology, TopologyError, Tunnel, derive_routes,
                       enumerate_tunnels, load_scenario, tunnels_through)

__all__ = [
    "ArrivalSpec", "Backpressure", "CapacityViolation", "Centralized", "Commodity", "Estimator",
    "ExperimentConfig", "Network", "OORP", "OverlayBackpressure", "RateController",
    "RateControllerConfig", "RunResult", "Scenario", "SlotDecision", "SlotTrace",
    "StabilityVerdict", "Topology", "TopologyError", "Tunnel", "classify", "derive_routes",
    "enumerate_tunnels", "fifo_serve", "load_scenario", "majority_verdict", "make_policy",
    "oracle_lambda_max",
    "rate_control_choose", "rate_control_experiment", "run", "run_sweep", "search_max_stable",
    "single_queue_demo",
    "tunnels_through",
]
