import os
import sys

import pytest
from hypothesis import HealthCheck, settings

from overlay_routing.topology import Commodity, Topology, build_scenario, derive_routes, load_scenario

sys.path.insert(0, os.path.dirname(__file__))

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def make_scenario(nodes, links, commodities, explicit=None, **kw):
    """Scenario from compact literals: nodes {id: kind}, links [(a, b, cap)], commodities [(id, s, d)]."""
    cap = {(str(a), str(b)): c for a, b, c in links}
    nodes = {str(n): k for n, k in nodes.items()}
    routes = derive_routes(nodes, cap, explicit=explicit)
    topo = Topology(nodes, cap, routes, name=kw.pop("name", "test"))
    coms = [Commodity(k, str(s), str(d)) for k, s, d in commodities]
    return build_scenario(topo, coms, **kw)


def line_scenario(first_cap=3, caps=(1, 1)):
    """Overlay 1 -> underlay 2 -> underlay 3 -> overlay 4."""
    return make_scenario({1: "overlay", 2: "underlay", 3: "underlay", 4: "overlay"},
                         [(1, 2, first_cap), (2, 3, caps[0]), (3, 4, caps[1])], [(1, 1, 4)])


@pytest.fixture(scope="session")
def topo_a():
    return load_scenario("topoA")


@pytest.fixture(scope="session")
def topo_b():
    return load_scenario("topoB-sub")


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "REPORT", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split("criterion")[1].split(":")[0])):
            terminalreporter.write_line(line)
