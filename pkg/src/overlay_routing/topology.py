"""Physical network model: nodes, capacitated links, underlay routes and tunnels.

Topologies are loaded from JSON files (schema in ``fixtures/README.md``) or
built in code. Everything here is immutable once constructed.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

OVERLAY = "overlay"
UNDERLAY = "underlay"

FIXTURE_DIR = Path(__file__).parent / "fixtures"


class TopologyError(ValueError):
    """Raised for structurally invalid topologies or unroutable pairs."""


def node_key(node: str) -> tuple:
    """Sort key: numeric ids in numeric order, then everything else."""
    return (0, int(node), "") if node.isdigit() else (1, 0, node)


Link = tuple[str, str]


@dataclass(frozen=True)
class Commodity:
    id: int
    source: str
    destination: str
    rate: float = 0.0

    def __post_init__(self):
        if self.source == self.destination:
            raise TopologyError(f"commodity {self.id}: source equals destination")
        if not (self.rate >= 0 and self.rate != float("inf")):
            raise TopologyError(f"commodity {self.id}: bad rate {self.rate!r}")


@dataclass(frozen=True)
class Tunnel:
    id: int
    path: tuple[str, ...]

    @property
    def source(self) -> str:
        return self.path[0]

    @property
    def sink(self) -> str:
        return self.path[-1]

    @property
    def first_link(self) -> Link:
        return (self.path[0], self.path[1])

    @property
    def links(self) -> tuple[Link, ...]:
        return tuple(zip(self.path[:-1], self.path[1:]))

    @property
    def underlay_links(self) -> tuple[Link, ...]:
        """Links whose tail is an underlay node (everything after the first hop)."""
        return self.links[1:]

    @property
    def is_direct(self) -> bool:
        return len(self.path) == 2

    @property
    def transit_time(self) -> int:
        # one slot per underlay hop on an empty path
        return len(self.path) - 2


@dataclass(frozen=True)
class Topology:
    nodes: Mapping[str, str]
    capacity: Mapping[Link, int]
    routes: Mapping[tuple[str, str], str] = field(default_factory=dict)
    name: str = ""

    def __post_init__(self):
        for n, kind in self.nodes.items():
            if kind not in (OVERLAY, UNDERLAY):
                raise TopologyError(f"node {n}: unknown kind {kind!r}")
        for (a, b), c in self.capacity.items():
            if a not in self.nodes or b not in self.nodes:
                raise TopologyError(f"link ({a},{b}) references unknown node")
            if a == b:
                raise TopologyError(f"self-loop at {a}")
            if int(c) != c or c < 1:
                raise TopologyError(f"link ({a},{b}): capacity must be a positive integer, got {c}")
        for (u, d), nxt in self.routes.items():
            if (u, nxt) not in self.capacity:
                raise TopologyError(f"route ({u}->{d}) uses missing link ({u},{nxt})")
            if self.nodes.get(u) != UNDERLAY:
                raise TopologyError(f"route entry at non-underlay node {u}")
        # walking every route checks acyclicity and overlay-free interiors
        for u, d in self.routes:
            self.route_path(u, d)

    # -- basic queries -------------------------------------------------

    def is_overlay(self, n: str) -> bool:
        return self.nodes[n] == OVERLAY

    @property
    def overlay_nodes(self) -> list[str]:
        return sorted((n for n, k in self.nodes.items() if k == OVERLAY), key=node_key)

    @property
    def underlay_nodes(self) -> list[str]:
        return sorted((n for n, k in self.nodes.items() if k == UNDERLAY), key=node_key)

    @property
    def links(self) -> list[Link]:
        return sorted(self.capacity, key=lambda e: (node_key(e[0]), node_key(e[1])))

    def out_links(self, n: str) -> list[Link]:
        return [e for e in self.links if e[0] == n]

    def route_path(self, start: str, dest: str) -> tuple[str, ...]:
        """Node sequence from underlay node ``start`` to ``dest`` via next hops."""
        path = [start]
        cur = start
        while cur != dest:
            if self.nodes.get(cur) != UNDERLAY:
                raise TopologyError(f"route {start}->{dest} passes through overlay node {cur}")
            try:
                cur = self.routes[(cur, dest)]
            except KeyError:
                raise TopologyError(f"no underlay route from {start} to {dest}") from None
            if cur in path:
                raise TopologyError(f"route {start}->{dest} loops at {cur}")
            path.append(cur)
        return tuple(path)

    def with_capacity(self, capacity: Mapping[Link, int | float]) -> "Topology":
        """Copy with some capacities replaced (values may be fractional; no validation)."""
        new = dict(self.capacity)
        new.update(capacity)
        obj = object.__new__(Topology)
        object.__setattr__(obj, "nodes", self.nodes)
        object.__setattr__(obj, "capacity", new)
        object.__setattr__(obj, "routes", self.routes)
        object.__setattr__(obj, "name", self.name)
        return obj


def derive_routes(nodes: Mapping[str, str], capacity: Mapping[Link, int],
                  destinations: Iterable[str] | None = None,
                  explicit: Mapping[tuple[str, str], str] | None = None) -> dict[tuple[str, str], str]:
    """Hop-count shortest-path next hops for every underlay node.

    Paths run through underlay nodes only; the destination itself may be of
    either kind. Among equally short next hops the lowest node id wins.
    Entries in ``explicit`` override the derived ones. Unreachable pairs are
    simply absent; ``Topology.route_path`` raises when such a pair is used.
    """
    preds: dict[str, list[str]] = {n: [] for n in nodes}
    for a, b in capacity:
        preds[b].append(a)
    dests = sorted(destinations if destinations is not None else nodes, key=node_key)
    routes: dict[tuple[str, str], str] = {}
    for d in dests:
        dist = {d: 0}
        frontier = deque([d])
        while frontier:
            v = frontier.popleft()
            for u in preds[v]:
                if u in dist or nodes[u] != UNDERLAY:
                    continue
                dist[u] = dist[v] + 1
                frontier.append(u)
        for u, du in dist.items():
            if u == d:
                continue
            hops = [b for (a, b) in capacity if a == u and dist.get(b) == du - 1]
            routes[(u, d)] = min(hops, key=node_key)
    if explicit:
        routes.update(explicit)
    return routes


def enumerate_tunnels(topo: Topology) -> list[Tunnel]:
    """All tunnels between ordered overlay pairs, ids assigned in path order."""
    paths: set[tuple[str, ...]] = set()
    overlay = topo.overlay_nodes
    for u in overlay:
        for _, j in topo.out_links(u):
            if topo.is_overlay(j):
                paths.add((u, j))
                continue
            for v in overlay:
                if v == u:
                    continue
                try:
                    paths.add((u,) + topo.route_path(j, v))
                except TopologyError:
                    pass
    ordered = sorted(paths, key=lambda p: [node_key(n) for n in p])
    return [Tunnel(i, p) for i, p in enumerate(ordered)]


def tunnels_through(tunnels: Sequence[Tunnel], link: Link, topo: Topology | None = None) -> set[int]:
    if topo is not None and link not in topo.capacity:
        raise TopologyError(f"unknown link {link}")
    return {t.id for t in tunnels if link in t.links}


def usable_pairs(topo: Topology, tunnels: Sequence[Tunnel], commodities: Sequence[Commodity],
                 restrict: Mapping[int, Sequence[Sequence[str]]] | None = None) -> dict[int, list[int]]:
    """Commodity ids allowed on each tunnel.

    A commodity may use a tunnel when the tunnel starts at a node the
    commodity can reach from its source (other than its destination) and
    ends at a node from which the destination is reachable. ``restrict``
    pins a commodity to an explicit list of paths.
    """
    succ: dict[str, set[str]] = {}
    for t in tunnels:
        succ.setdefault(t.source, set()).add(t.sink)
    allowed: dict[int, list[int]] = {t.id: [] for t in tunnels}
    for c in commodities:
        reach = {c.destination}
        changed = True
        while changed:
            changed = False
            for a, bs in succ.items():
                if a not in reach and a != c.destination and bs & reach:
                    reach.add(a)
                    changed = True
        born = {c.source}
        stack = [c.source]
        while stack:
            a = stack.pop()
            if a == c.destination:
                continue
            for b in succ.get(a, ()):
                if b not in born:
                    born.add(b)
                    stack.append(b)
        pinned = None
        if restrict and c.id in restrict:
            pinned = {tuple(p) for p in restrict[c.id]}
        for t in tunnels:
            if t.source == c.destination or t.source not in born or t.sink not in reach:
                continue
            if pinned is not None and t.path not in pinned:
                continue
            allowed[t.id].append(c.id)
    return allowed


@dataclass(frozen=True)
class BackgroundFlow:
    path: tuple[str, ...]
    rate: float


@dataclass(frozen=True)
class UtilitySpec:
    commodity: int
    weight: float
    cap: float


@dataclass(frozen=True)
class Scenario:
    """A topology plus everything a fixture file carries about traffic."""

    topology: Topology
    commodities: tuple[Commodity, ...]
    tunnels: tuple[Tunnel, ...]
    usable: Mapping[int, tuple[int, ...]]
    lambda_max: tuple[float, ...] | None = None
    background: tuple[BackgroundFlow, ...] = ()
    utilities: tuple[UtilitySpec, ...] = ()
    restrict: Mapping[int, tuple[tuple[str, ...], ...]] = field(default_factory=dict)
    extra: Mapping = field(default_factory=dict)

    @property
    def name(self) -> str:
        return self.topology.name

    def tunnel_by_path(self, *path: str) -> Tunnel:
        for t in self.tunnels:
            if t.path == tuple(path):
                return t
        raise KeyError(path)

    def check_background(self):
        for flow in self.background:
            if len(flow.path) < 2:
                raise TopologyError(f"background path too short: {flow.path}")
            for e in zip(flow.path[:-1], flow.path[1:]):
                if e not in self.topology.capacity:
                    raise TopologyError(f"background path uses missing link {e}")
            if self.topology.nodes[flow.path[0]] != UNDERLAY:
                raise TopologyError(f"background flow must start in the underlay: {flow.path}")
            if self.topology.route_path(flow.path[0], flow.path[-1]) != flow.path:
                raise TopologyError(f"background path {flow.path} disagrees with underlay routing")


def build_scenario(topo: Topology, commodities: Sequence[Commodity], *,
                   restrict: Mapping[int, Sequence[Sequence[str]]] | None = None,
                   lambda_max: Sequence[float] | None = None,
                   background: Sequence[BackgroundFlow] = (),
                   utilities: Sequence[UtilitySpec] = (),
                   extra: Mapping | None = None) -> Scenario:
    for c in commodities:
        for n in (c.source, c.destination):
            if n not in topo.nodes or not topo.is_overlay(n):
                raise TopologyError(f"commodity {c.id}: endpoint {n} is not an overlay node")
    tunnels = enumerate_tunnels(topo)
    usable = usable_pairs(topo, tunnels, commodities, restrict)
    sc = Scenario(topo, tuple(commodities), tuple(tunnels),
                  {k: tuple(v) for k, v in usable.items()},
                  tuple(lambda_max) if lambda_max is not None else None,
                  tuple(background), tuple(utilities),
                  {k: tuple(tuple(p) for p in v) for k, v in (restrict or {}).items()},
                  dict(extra or {}))
    sc.check_background()
    return sc


# -- file IO -----------------------------------------------------------

def load_scenario(source: str | Path | Mapping) -> Scenario:
    """Load a scenario from a fixture name (``topoA``), a JSON path or a parsed dict."""
    if isinstance(source, Mapping):
        doc = source
    else:
        p = Path(source)
        if not p.exists():
            p = FIXTURE_DIR / f"{str(source).replace('-', '_')}.json"
        if not p.exists():
            raise FileNotFoundError(source)
        doc = json.loads(p.read_text())
    nodes = {str(n["id"]): n["kind"] for n in doc["nodes"]}
    capacity = {(str(a), str(b)): int(c) for a, b, c in doc["links"]}
    explicit = {(str(u), str(d)): str(nxt) for u, d, nxt in doc.get("routes", [])}
    routes = derive_routes(nodes, capacity, explicit=explicit)
    topo = Topology(nodes, capacity, routes, name=doc.get("name", ""))
    commodities = [Commodity(int(c["id"]), str(c["source"]), str(c["destination"]),
                             float(c.get("rate", 0.0))) for c in doc.get("commodities", [])]
    restrict = {int(k): [[str(n) for n in p] for p in v]
                for k, v in doc.get("restrict", {}).items()}
    background = [BackgroundFlow(tuple(str(n) for n in f["path"]), float(f["rate"]))
                  for f in doc.get("background", [])]
    utilities = [UtilitySpec(int(u["commodity"]), float(u["weight"]), float(u["cap"]))
                 for u in doc.get("utilities", [])]
    extra = {k: v for k, v in doc.items()
             if k not in {"nodes", "links", "routes", "commodities", "restrict",
                          "background", "utilities", "lambda_max", "name"}}
    return build_scenario(topo, commodities, restrict=restrict or None,
                          lambda_max=doc.get("lambda_max"), background=background,
                          utilities=utilities, extra=extra)


def scenario_to_dict(sc: Scenario) -> dict:
    topo = sc.topology
    doc = {
        "name": topo.name,
        "nodes": [{"id": n, "kind": topo.nodes[n]} for n in sorted(topo.nodes, key=node_key)],
        "links": [[a, b, topo.capacity[(a, b)]] for a, b in topo.links],
        "commodities": [{"id": c.id, "source": c.source, "destination": c.destination,
                         "rate": c.rate} for c in sc.commodities],
    }
    if sc.lambda_max is not None:
        doc["lambda_max"] = list(sc.lambda_max)
    if sc.background:
        doc["background"] = [{"path": list(f.path), "rate": f.rate} for f in sc.background]
    if sc.utilities:
        doc["utilities"] = [{"commodity": u.commodity, "weight": u.weight, "cap": u.cap}
                            for u in sc.utilities]
    if sc.restrict:
        doc["restrict"] = {str(k): [list(p) for p in v] for k, v in sc.restrict.items()}
    doc.update(sc.extra)
    return doc
