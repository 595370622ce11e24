"""Routing policies and tunnel-backlog estimators.

Every policy follows the same protocol: ``decide(net)`` reads the
start-of-slot state and returns a :class:`SlotDecision`; ``observe(net,
trace)`` sees what happened during the slot. Ties between equal weights
always go to the lowest (tunnel id, commodity id).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from . import lp
from .engine import EMPTY_PROBE, PRIORITY_PROBE, Network, SlotDecision, SlotTrace

EXACT = "exact"
DELAY = "delay"
DELAY_PROBE = "delay+empty-probe"
PRIORITY = "priority-probe"
ESTIMATORS = (EXACT, DELAY, DELAY_PROBE, PRIORITY)


class _Tables:
    """Per-tunnel lookups shared by the policies."""

    def __init__(self, net: Network):
        sc = net.scenario
        self.net = net
        self.entries = []  # (tid, src idx, sink idx, [(cid, k idx)], first link, cap, direct)
        for t in sc.tunnels:
            ks = [(cid, net.kid[cid]) for cid in sc.usable[t.id]]
            if not ks:
                continue
            self.entries.append((t.id, net.t_src[t.id], net.t_sink[t.id], ks, t.first_link,
                                 net.first_cap[t.first_link], t.is_direct))
        groups: dict = {}
        for e in self.entries:
            groups.setdefault(e[4], []).append(e)
        self.groups = list(groups.items())


def _clip_to_first_links(requests: list[tuple[int, int, int, tuple, int]]) -> SlotDecision:
    """Turn per-tunnel requests into a decision that respects each first link."""
    left: dict = {}
    flows = []
    for tid, cid, n, fl, cap in requests:
        room = left.get(fl, cap)
        n = min(n, room)
        if n > 0:
            flows.append((tid, cid, n))
            left[fl] = room - n
    return SlotDecision(flows)


class Policy:
    name = "policy"

    def bind(self, net: Network) -> "Policy":
        self.net = net
        self.tables = _Tables(net)
        return self

    def decide(self, net: Network) -> SlotDecision:
        raise NotImplementedError

    def observe(self, net: Network, trace: SlotTrace) -> None:
        pass


class Backpressure(Policy):
    """Classic backpressure that sees each tunnel as a plain link of its first-hop capacity."""

    name = "bp"

    def weight(self, net, tid, s, d, k):
        return net.Q[s][k] - net.Q[d][k]

    def decide(self, net: Network) -> SlotDecision:
        requests = []
        for tid, s, d, ks, fl, cap, direct in self.tables.entries:
            best, arg = 0, None
            for cid, k in ks:
                w = self.weight(net, tid, s, d, k) if not direct else net.Q[s][k] - net.Q[d][k]
                if w > best:
                    best, arg = w, cid
            if arg is not None:
                requests.append((tid, arg, cap, fl, cap))
        return _clip_to_first_links(requests)


class OverlayBackpressure(Backpressure):
    """Backpressure whose tunnel weights subtract the packets already in flight."""

    name = "obp"

    def weight(self, net, tid, s, d, k):
        return net.Q[s][k] - net.H[tid][k] - net.Q[d][k]


class Estimator:
    """Per-tunnel estimate of the summed underlay backlog.

    ``exact`` reads the queues; ``delay`` uses the end-to-end delay of the
    most recent packet to leave the tunnel, minus the empty-path transit
    time; ``delay+empty-probe`` additionally sends an empty probe whenever
    a tunnel has been idle for ``idle_threshold`` slots; ``priority-probe``
    sends a zero-cost probe every ``probe_interval`` slots and adopts the
    queue-length sum it brings back.
    """

    def __init__(self, mode: str = EXACT, probe_interval: int = 10, idle_threshold: int = 10):
        if mode not in ESTIMATORS:
            raise ValueError(f"unknown estimator {mode!r}")
        if probe_interval < 1 or idle_threshold < 1:
            raise ValueError("probe interval and idle threshold must be >= 1")
        self.mode = mode
        self.probe_interval = probe_interval
        self.idle_threshold = idle_threshold

    def bind(self, net: Network, tunnels) -> "Estimator":
        self.net = net
        self.tunnels = [tid for tid in tunnels if net.t_links[tid]]
        self.transit = {t.id: t.transit_time for t in net.tunnels}
        self.value = [0] * len(net.tunnels)
        self.last_sent = {tid: net.t for tid in self.tunnels}
        return self

    def estimate(self, tid: int) -> int:
        if self.mode == EXACT:
            return self.net.tunnel_backlog(tid)
        return self.value[tid]

    def probes(self, t: int) -> list[tuple[int, str]]:
        if self.mode == PRIORITY:
            T = self.probe_interval
            return [(tid, PRIORITY_PROBE) for tid in self.tunnels if t % T == tid % T]
        if self.mode == DELAY_PROBE:
            return [(tid, EMPTY_PROBE) for tid in self.tunnels
                    if t - self.last_sent[tid] >= self.idle_threshold]
        return []

    def update(self, trace: SlotTrace, sent_probes=()) -> None:
        if self.mode in (DELAY, DELAY_PROBE):
            for tid, delay in trace.exit_delay.items():
                self.value[tid] = max(0, delay - self.transit[tid])
            if self.mode == DELAY_PROBE:
                for tid in trace.used:
                    self.last_sent[tid] = trace.slot
                for tid, _ in sent_probes:
                    self.last_sent[tid] = trace.slot
        elif self.mode == PRIORITY:
            for tid, total in trace.probe_exit.items():
                self.value[tid] = total


class OORP(Policy):
    """Dual-subgradient overlay routing with queues standing in for dual variables.

    On each overlay-origin link the (tunnel, commodity) pair with the largest
    positive weight ``Q_src - backlog_estimate - Q_sink`` gets the whole link.
    """

    name = "oorp"

    def __init__(self, estimator: Estimator | None = None):
        self.estimator = estimator or Estimator(EXACT)
        self._probes = []

    def bind(self, net: Network) -> "OORP":
        super().bind(net)
        self.estimator.bind(net, [e[0] for e in self.tables.entries])
        return self

    def decide(self, net: Network) -> SlotDecision:
        Q = net.Q
        exact = self.estimator.mode == EXACT
        if exact:
            lens = [len(q) for q in net.queues]
            t_links = net.t_links
        else:
            value = self.estimator.value
        flows = []
        for fl, entries in self.tables.groups:
            best, arg, cap = 0, None, 0
            for tid, s, d, ks, _, c, direct in entries:
                qs = Q[s]
                if not any(qs):
                    continue
                if direct:
                    b = 0
                elif exact:
                    b = 0
                    for i in t_links[tid]:
                        b += lens[i]
                else:
                    b = value[tid]
                qd = Q[d]
                for cid, k in ks:
                    w = qs[k] - b - qd[k]
                    if w > best:
                        best, arg, cap = w, (tid, cid), c
            if arg is not None:
                flows.append((arg[0], arg[1], cap))
        self._probes = self.estimator.probes(net.t)
        return SlotDecision(flows, list(self._probes))

    def observe(self, net: Network, trace: SlotTrace) -> None:
        self.estimator.update(trace, self._probes)


class Centralized(Policy):
    """Frame-based policy: solve the backlog-weighted tunnel LP every ``frame`` slots.

    Rates are rationalized to p/q and emitted evenly. Emission owed on a
    pair is released only while every link of its tunnel has room left in
    the slot, so per-slot injections never exceed any link capacity.
    """

    name = "centralized"

    def __init__(self, frame: int = 100, shrink: float = 0.0, q_max: int = 1000):
        if frame < 1:
            raise ValueError("frame length must be >= 1")
        self.frame = frame
        self.shrink = shrink
        self.q_max = q_max
        self.schedule: dict[tuple[int, int], tuple[int, int]] = {}
        self.owed: dict[tuple[int, int], int] = {}
        self.frame_start = 0
        self.rates: dict[tuple[int, int], float] = {}
        self.frames: list[dict] = []

    def bind(self, net: Network) -> "Centralized":
        super().bind(net)
        topo = net.scenario.topology
        self.capacity = {e: c * (1.0 - self.shrink) for e, c in topo.capacity.items()}
        self.tunnel_links = {t.id: t.links for t in net.tunnels}
        return self

    def _start_frame(self, net: Network) -> None:
        self.rates = lp.centralized_frame_lp(net.scenario, net.overlay_snapshot(), self.capacity)
        self.schedule = {pair: lp.rationalize(r, self.q_max) for pair, r in self.rates.items()}
        self.frame_start = net.t
        self.frames.append(dict(self.rates))

    def decide(self, net: Network) -> SlotDecision:
        if net.t % self.frame == 0 or not self.frames:
            self._start_frame(net)
        s = net.t - self.frame_start
        for pair, (p, q) in self.schedule.items():
            n = lp.emission_count(p, q, s)
            if n:
                self.owed[pair] = self.owed.get(pair, 0) + n
        room = dict(net.scenario.topology.capacity)
        flows = []
        for pair in sorted(self.owed):
            tid, cid = pair
            # emission that finds the queue empty is forfeited
            owed = min(self.owed[pair], net.backlog(net.tunnels[tid].source, cid))
            n = min(owed, *(room[e] for e in self.tunnel_links[tid]))
            if n > 0:
                flows.append((tid, cid, n))
                for e in self.tunnel_links[tid]:
                    room[e] -= n
            self.owed[pair] = owed - n
        if s == self.frame - 1:
            self.owed.clear()
        return SlotDecision(flows)


@dataclass
class RateControllerConfig:
    commodity: int
    weight: float
    cap: float

    def __post_init__(self):
        if self.weight <= 0 or self.cap <= 0:
            raise ValueError("utility weight and cap must be positive")


def rate_control_choose(cfg: RateControllerConfig, q: float) -> float:
    """argmax over 0 <= x <= cap of weight*log(x) - q*x."""
    if q <= 0:
        return cfg.cap
    return min(cfg.cap, cfg.weight / q)


class RateController:
    """Admits packets at the utility-optimal rate for the current source backlog."""

    def __init__(self, configs: list[RateControllerConfig]):
        self.configs = configs
        self.credit = {c.commodity: 0.0 for c in configs}
        self.rates = {c.commodity: 0.0 for c in configs}

    def admit(self, net: Network) -> list[tuple[int, int]]:
        out = []
        for cfg in self.configs:
            k = net.kid[cfg.commodity]
            lam = rate_control_choose(cfg, net.Q[net.src[k]][k])
            self.rates[cfg.commodity] = lam
            credit = self.credit[cfg.commodity] + lam
            n = math.floor(credit)
            self.credit[cfg.commodity] = credit - n
            out.append((cfg.commodity, n))
        return out


def make_policy(name: str, estimator: str = EXACT, probe_interval: int = 10,
                idle_threshold: int = 10, frame: int = 100) -> Policy:
    name = name.lower()
    if name == "bp":
        return Backpressure()
    if name == "obp":
        return OverlayBackpressure()
    if name == "oorp":
        return OORP(Estimator(estimator, probe_interval, idle_threshold))
    if name == "centralized":
        return Centralized(frame)
    raise ValueError(f"unknown policy {name!r}")
