"""Slotted packet-level simulation of an overlay on a FIFO underlay.

Intra-slot order, applied by :meth:`Network.step`:

1. the policy has already decided from the start-of-slot state;
2. overlay transmissions: packets leave overlay queues, enter the first
   underlay FIFO of their tunnel (direct links deliver immediately);
3. underlay service: priority probes hop first at no cost, then every
   uncontrollable link forwards up to its capacity in FIFO order; forwarded
   packets join the next queue at the start of the following slot, so each
   underlay hop takes one slot;
4. external arrivals join the overlay queues;
5. the slot counter advances.

Underlay backlog ``Q_ab`` is the number of packets still waiting on a link
after its service; packets between hops are counted as in transit.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Sequence

from .topology import Scenario, node_key

DATA = "data"
EMPTY_PROBE = "empty-probe"
PRIORITY_PROBE = "priority-probe"
BACKGROUND = "background"

class CapacityViolation(RuntimeError):
    """A decision asked a link to carry more than its capacity."""


@dataclass(frozen=True)
class Packet:
    """Readable view of an underlay packet (the engine stores plain tuples)."""

    tunnel: int
    commodity: int | None
    inject_slot: int
    kind: str
    probe_sum: int = 0


@dataclass
class SlotDecision:
    # (tunnel id, commodity id, packets); at most one entry per pair
    flows: list[tuple[int, int, int]] = field(default_factory=list)
    # (tunnel id, EMPTY_PROBE | PRIORITY_PROBE)
    probes: list[tuple[int, str]] = field(default_factory=list)


class SlotTrace:
    """What happened in one slot.

    ``exit_delay`` maps a tunnel to the end-to-end delay of the last data or
    empty-probe packet that left it; ``probe_exit`` maps a tunnel to the
    queue-length sum of an exiting priority probe; ``used`` lists tunnels
    that took data. The remaining dicts are filled only in detail mode:
    ``injected``/``exited`` per (tunnel, commodity), ``arrivals`` per
    commodity, ``served`` per link, and ``entered`` per (tunnel, link).
    """

    __slots__ = ("slot", "exit_delay", "probe_exit", "used", "injected", "exited",
                 "arrivals", "served", "entered")

    def __init__(self, slot: int):
        self.slot = slot
        self.exit_delay: dict[int, int] = {}
        self.probe_exit: dict[int, int] = {}
        self.used: set[int] = set()
        self.injected: dict[tuple[int, int], int] = {}
        self.exited: dict[tuple[int, int], int] = {}
        self.arrivals: dict[int, int] = {}
        self.served: dict[tuple[str, str], int] = {}
        self.entered: dict[tuple[int, tuple[str, str]], int] = {}

    def reduction(self, tunnel: int, link: tuple[str, str]) -> float | None:
        """Fraction of this slot's injection into ``tunnel`` that reached ``link``."""
        sent = sum(v for (t, _), v in self.injected.items() if t == tunnel)
        if sent == 0:
            return None
        return self.entered.get((tunnel, link), 0) / sent


def fifo_serve(queue: deque, capacity: int, probes: list | None = None) -> tuple[list, list]:
    """Serve one slot of a FIFO link.

    Priority probes (if given) all depart at no capacity cost; then up to
    ``capacity`` queued packets depart oldest first. Returns
    ``(departed_probes, departed_packets)``; ``queue`` is consumed in place.
    """
    if capacity < 0:
        raise ValueError("capacity must be non-negative")
    out_probes = list(probes or [])
    if probes:
        probes.clear()
    n = min(capacity, len(queue))
    return out_probes, [queue.popleft() for _ in range(n)]


class Network:
    """Mutable network state plus the static indices needed to step it."""

    def __init__(self, sc: Scenario, detail: bool = False):
        self.scenario = sc
        self.detail = detail
        topo = sc.topology
        self.overlay = topo.overlay_nodes
        self.node_idx = {n: i for i, n in enumerate(self.overlay)}
        self.commodities = list(sc.commodities)
        self.kid = {c.id: i for i, c in enumerate(self.commodities)}
        self.dest = [self.node_idx[c.destination] for c in self.commodities]
        self.src = [self.node_idx[c.source] for c in self.commodities]

        self.links = [e for e in topo.links if not topo.is_overlay(e[0])]
        self.link_idx = {e: i for i, e in enumerate(self.links)}
        self.cap = [topo.capacity[e] for e in self.links]
        self.first_links = sorted({t.first_link for t in sc.tunnels},
                                  key=lambda e: (node_key(e[0]), node_key(e[1])))
        self.first_cap = {e: topo.capacity[e] for e in self.first_links}

        self.tunnels = list(sc.tunnels)
        nt = len(self.tunnels)
        self.t_src = [self.node_idx[t.source] for t in self.tunnels]
        self.t_sink = [self.node_idx[t.sink] for t in self.tunnels]
        self.t_links = [[self.link_idx[e] for e in t.underlay_links] for t in self.tunnels]
        self.t_first = [t.first_link for t in self.tunnels]
        fl_idx = {e: i for i, e in enumerate(self.first_links)}
        self.t_first_idx = [fl_idx[e] for e in self.t_first]
        self.first_cap_list = [self.first_cap[e] for e in self.first_links]
        # background flows are pseudo-tunnels numbered after the real ones
        self.bg_ids = []
        for j, flow in enumerate(sc.background):
            self.t_links.append([self.link_idx[e] for e in zip(flow.path[:-1], flow.path[1:])])
            self.bg_ids.append(nt + j)
        self.next_link = [
            {a: b for a, b in zip(ls, ls[1:] + [-1])} for ls in self.t_links
        ]

        K = len(self.commodities)
        self.Q = [[0] * K for _ in self.overlay]
        self.H = [[0] * K for _ in range(nt)]
        self.queues: list[deque] = [deque() for _ in self.links]
        self.transit: list[list] = [[] for _ in self.links]
        self.probes: list[list] = [[] for _ in self.links]
        self.n_probes = 0
        self.t = 0
        self.arrived = [0] * K
        self.delivered = [0] * K
        self.bg_injected = 0
        self.bg_delivered = 0
        self.probes_sent = 0

    # -- views -----------------------------------------------------------

    def backlog(self, node: str, commodity: int) -> int:
        return self.Q[self.node_idx[node]][self.kid[commodity]]

    def link_backlog(self, link: tuple[str, str]) -> int:
        return len(self.queues[self.link_idx[link]])

    def link_queue(self, link: tuple[str, str]) -> list[Packet]:
        return [self._view(p) for p in self.queues[self.link_idx[link]]]

    def _view(self, p) -> Packet:
        tid, k, slot, code = p
        kind = {0: DATA, 1: EMPTY_PROBE, 2: BACKGROUND}[code]
        return Packet(tid, self.commodities[k].id if k >= 0 else None, slot, kind)

    def tunnel_backlog(self, tid: int) -> int:
        """Exact sum of underlay queue lengths along a tunnel."""
        q = self.queues
        return sum(len(q[i]) for i in self.t_links[tid])

    def in_flight(self, tid: int, commodity: int) -> int:
        return self.H[tid][self.kid[commodity]]

    def total_backlog(self) -> int:
        return sum(map(sum, self.Q)) + sum(map(sum, self.H))

    def commodity_backlog(self) -> list[int]:
        K = len(self.commodities)
        return [sum(row[k] for row in self.Q) + sum(row[k] for row in self.H) for k in range(K)]

    def overlay_snapshot(self) -> dict[tuple[str, int], int]:
        return {(n, c.id): self.Q[i][j] for i, n in enumerate(self.overlay)
                for j, c in enumerate(self.commodities)}

    def underlay_snapshot(self) -> dict[tuple[str, str], int]:
        return {e: len(self.queues[i]) for i, e in enumerate(self.links)}

    def underlay_data(self) -> int:
        """Commodity packets in underlay queues or between hops (no probes, no background)."""
        n = 0
        for buf in list(self.queues) + self.transit:
            n += sum(1 for p in buf if p[3] == 0)
        return n

    def check_invariants(self) -> None:
        for row in self.Q:
            assert all(v >= 0 for v in row)
        for k, d in enumerate(self.dest):
            assert self.Q[d][k] == 0
        for row in self.H:
            assert all(v >= 0 for v in row)
        in_flight = sum(map(sum, self.H))
        assert in_flight == self.underlay_data()
        for k in range(len(self.commodities)):
            held = sum(row[k] for row in self.Q) + sum(row[k] for row in self.H)
            assert self.arrived[k] == held + self.delivered[k]

    # -- dynamics --------------------------------------------------------

    def add_arrivals(self, node: str, commodity: int, n: int) -> None:
        """Place packets directly in an overlay queue (used to set up states)."""
        k = self.kid[commodity]
        i = self.node_idx[node]
        if i == self.dest[k]:
            raise ValueError("cannot hold packets at their destination")
        self.Q[i][k] += n
        self.arrived[k] += n

    def inject_probe(self, tid: int, kind: str) -> None:
        """Send a probe into a tunnel's first underlay queue; no-op on direct links."""
        links = self.t_links[tid]
        if not links:
            return
        self.probes_sent += 1
        if kind == PRIORITY_PROBE:
            self.probes[links[0]].append([tid, 0, self.t])
            self.n_probes += 1
        elif kind == EMPTY_PROBE:
            self.queues[links[0]].append((tid, -1, self.t, 1))
        else:
            raise ValueError(f"unknown probe kind {kind!r}")

    def _serve_detail(self, trace: SlotTrace, i: int, n: int) -> None:
        """Serve ``n`` packets from queue ``i`` and record per-link and per-tunnel counts."""
        q = self.queues[i]
        trace.served[self.links[i]] = n
        exit_time = self.t + 1
        for _ in range(n):
            p = q.popleft()
            tid = p[0]
            nl = self.next_link[tid][i]
            if nl >= 0:
                self.transit[nl].append(p)
                if p[3] == 0:
                    e = self.links[nl]
                    trace.entered[(tid, e)] = trace.entered.get((tid, e), 0) + 1
                continue
            code = p[3]
            if code == 2:
                self.bg_delivered += 1
                continue
            trace.exit_delay[tid] = exit_time - p[2]
            if code == 1:
                continue
            k = p[1]
            self.H[tid][k] -= 1
            sink = self.t_sink[tid]
            if sink == self.dest[k]:
                self.delivered[k] += 1
            else:
                self.Q[sink][k] += 1
            key = (tid, self.commodities[k].id)
            trace.exited[key] = trace.exited.get(key, 0) + 1

    def step(self, decision: SlotDecision | None = None, arrivals: Sequence[tuple[int, int]] = (),
             background: Sequence[int] = ()) -> SlotTrace:
        """Advance one slot.

        ``arrivals`` holds (commodity id, packets) pairs landing at each
        commodity's source; ``background`` holds per-flow packet counts.
        """
        t = self.t
        trace = SlotTrace(t)
        detail = self.detail
        Q, H, queues, transit = self.Q, self.H, self.queues, self.transit
        kid = self.kid

        for i, buf in enumerate(transit):
            if buf:
                queues[i].extend(buf)
                transit[i] = []

        if decision is not None:
            flows = decision.flows
            if len(flows) > 1:
                load = [0] * len(self.first_cap_list)
                t_first_idx = self.t_first_idx
                for tid, cid, n in flows:
                    if n > 0:
                        load[t_first_idx[tid]] += n
                for j, n in enumerate(load):
                    if n > self.first_cap_list[j]:
                        fl = self.first_links[j]
                        raise CapacityViolation(f"slot {t}: {n} packets scheduled on link {fl} "
                                                f"of capacity {self.first_cap[fl]}")
            elif flows and flows[0][2] > self.first_cap_list[self.t_first_idx[flows[0][0]]]:
                fl = self.t_first[flows[0][0]]
                raise CapacityViolation(f"slot {t}: {flows[0][2]} packets scheduled on link {fl} "
                                        f"of capacity {self.first_cap[fl]}")
            dest = self.dest
            for tid, cid, n in decision.flows:
                k = kid[cid]
                s = self.t_src[tid]
                n = min(n, Q[s][k])
                if n <= 0:
                    continue
                Q[s][k] -= n
                trace.used.add(tid)
                if detail:
                    trace.injected[(tid, cid)] = n
                links = self.t_links[tid]
                if not links:
                    sink = self.t_sink[tid]
                    if sink == dest[k]:
                        self.delivered[k] += n
                    else:
                        Q[sink][k] += n
                    trace.exit_delay[tid] = 0
                    if detail:
                        trace.exited[(tid, cid)] = trace.exited.get((tid, cid), 0) + n
                    continue
                H[tid][k] += n
                pkt = (tid, k, t, 0)
                queues[links[0]].extend([pkt] * n)
                if detail:
                    e = self.links[links[0]]
                    trace.entered[(tid, e)] = trace.entered.get((tid, e), 0) + n
            for tid, kind in decision.probes:
                self.inject_probe(tid, kind)

        for j, n in zip(self.bg_ids, background):
            if n > 0:
                pkt = (j, -1, t, 2)
                queues[self.t_links[j][0]].extend([pkt] * n)
                self.bg_injected += n

        # underlay service
        exit_time = t + 1
        next_link = self.next_link
        cap = self.cap
        probes = self.probes
        if self.n_probes:
            new_probes: list[list] = [[] for _ in probes]
            for i, here in enumerate(probes):
                if not here:
                    continue
                backlog = len(queues[i])
                for pr in here:
                    pr[1] += backlog
                    nl = next_link[pr[0]][i]
                    if nl < 0:
                        trace.probe_exit[pr[0]] = pr[1]
                        self.n_probes -= 1
                    else:
                        new_probes[nl].append(pr)
            self.probes = new_probes
        t_sink, dest, delivered = self.t_sink, self.dest, self.delivered
        exit_delay = trace.exit_delay
        for i, q in enumerate(queues):
            if not q:
                continue
            n = cap[i] if cap[i] < len(q) else len(q)
            if detail:
                self._serve_detail(trace, i, n)
                continue
            for _ in range(n):
                p = q.popleft()
                tid = p[0]
                nl = next_link[tid][i]
                if nl >= 0:
                    transit[nl].append(p)
                    continue
                code = p[3]
                if code == 2:
                    self.bg_delivered += 1
                    continue
                exit_delay[tid] = exit_time - p[2]
                if code == 1:
                    continue
                k = p[1]
                H[tid][k] -= 1
                sink = t_sink[tid]
                if sink == dest[k]:
                    delivered[k] += 1
                else:
                    Q[sink][k] += 1
        for cid, n in arrivals:
            if n > 0:
                k = kid[cid]
                Q[self.src[k]][k] += n
                self.arrived[k] += n
                if detail:
                    trace.arrivals[cid] = trace.arrivals.get(cid, 0) + n

        self.t = t + 1
        return trace
