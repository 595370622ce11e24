import pytest
from hypothesis import given, strategies as st

from conftest import make_scenario
from oracles import shortest_hops
from overlay_routing.topology import (Topology, TopologyError, derive_routes, enumerate_tunnels,
                                      load_scenario, scenario_to_dict, tunnels_through)

FIG2 = ({1: "overlay", 2: "overlay", 3: "underlay", 4: "overlay", 5: "overlay"},
        [(1, 3, 1), (2, 3, 1), (3, 4, 1), (3, 5, 1), (1, 4, 1)])


def test_topoA_ring_route_to_d1(topo_a):
    assert topo_a.topology.route_path("3", "d1") == ("3", "1", "2", "d1")


def test_single_underlay_hop():
    sc = make_scenario({"a": "overlay", "u": "underlay", "b": "overlay"}, [("a", "u", 1), ("u", "b", 1)],
                       [(1, "a", "b")])
    assert sc.topology.route_path("u", "b") == ("u", "b")


def test_line_route():
    sc = make_scenario({1: "overlay", 2: "underlay", 3: "underlay", 4: "overlay"},
                       [(1, 2, 3), (2, 3, 1), (3, 4, 1)], [(1, 1, 4)])
    assert sc.topology.route_path("2", "4") == ("2", "3", "4")
    assert [t.path for t in sc.tunnels] == [("1", "2", "3", "4")]


def test_tie_goes_to_lowest_next_hop():
    nodes = {"s": "underlay", "3": "underlay", "10": "underlay", "d": "overlay"}
    cap = {("s", "10"): 1, ("s", "3"): 1, ("10", "d"): 1, ("3", "d"): 1}
    assert derive_routes(nodes, cap)[("s", "d")] == "3"


def test_unreachable_pair_is_named():
    nodes = {"a": "overlay", "u": "underlay", "b": "overlay"}
    topo = Topology(nodes, {("a", "u"): 1}, derive_routes(nodes, {("a", "u"): 1}))
    with pytest.raises(TopologyError, match="u to b"):
        topo.route_path("u", "b")


def test_explicit_routes_take_precedence():
    nodes = {"s": "underlay", "3": "underlay", "10": "underlay", "d": "overlay"}
    cap = {("s", "10"): 1, ("s", "3"): 1, ("10", "d"): 1, ("3", "d"): 1}
    assert derive_routes(nodes, cap, explicit={("s", "d"): "10"})[("s", "d")] == "10"


def test_topoA_commodity_one_has_two_tunnels(topo_a):
    paths = {t.path for t in topo_a.tunnels if 1 in topo_a.usable[t.id]}
    assert paths == {("s1", "1", "2", "d1"), ("s1", "3", "1", "2", "d1")}


def test_fig2_tunnels_and_shared_link():
    sc = make_scenario(*FIG2, [(1, 1, 4)])
    paths = {t.path for t in sc.tunnels}
    assert {("1", "3", "4"), ("2", "3", "4"), ("2", "3", "5"), ("1", "4")} <= paths
    through = {sc.tunnels[i].path for i in tunnels_through(sc.tunnels, ("3", "4"), sc.topology)}
    assert through == {("1", "3", "4"), ("2", "3", "4")}
    direct = sc.tunnel_by_path("1", "4")
    assert direct.is_direct and direct.transit_time == 0


def test_overlay_clique_of_two():
    sc = make_scenario({"a": "overlay", "b": "overlay"}, [("a", "b", 1), ("b", "a", 1)], [(1, "a", "b")])
    assert [t.path for t in sc.tunnels] == [("a", "b"), ("b", "a")]


def test_unused_link_and_unknown_link(topo_a):
    sc = make_scenario({1: "overlay", 2: "underlay", 3: "overlay", 9: "underlay"},
                       [(1, 2, 1), (2, 3, 1), (9, 2, 1)], [(1, 1, 3)])
    assert tunnels_through(sc.tunnels, ("9", "2"), sc.topology) == set()
    with pytest.raises(TopologyError):
        tunnels_through(topo_a.tunnels, ("d1", "s1"), topo_a.topology)


def test_topoA_link_12_membership(topo_a):
    got = {topo_a.tunnels[i].path for i in tunnels_through(topo_a.tunnels, ("1", "2"))}
    assert {("s1", "1", "2", "d1"), ("s1", "3", "1", "2", "d1"), ("s2", "1", "2", "3", "d2")} <= got
    # exhaustive scan is the definition
    assert got == {t.path for t in topo_a.tunnels if ("1", "2") in t.links}


@pytest.mark.parametrize("bad", [
    {"nodes": {"a": "overlay", "b": "overlay"}, "cap": {("a", "b"): 0}},
    {"nodes": {"a": "overlay", "b": "overlay"}, "cap": {("a", "b"): 1.5}},
    {"nodes": {"a": "overlay", "b": "weird"}, "cap": {("a", "b"): 1}},
    {"nodes": {"a": "overlay"}, "cap": {("a", "z"): 1}},
])
def test_invalid_topologies(bad):
    with pytest.raises(TopologyError):
        Topology(bad["nodes"], bad["cap"])


def test_route_loop_rejected():
    nodes = {"u": "underlay", "v": "underlay", "d": "overlay"}
    cap = {("u", "v"): 1, ("v", "u"): 1, ("v", "d"): 1}
    with pytest.raises(TopologyError, match="loops"):
        Topology(nodes, cap, {("u", "d"): "v", ("v", "d"): "u"})


def test_route_through_overlay_rejected():
    nodes = {"u": "underlay", "o": "overlay", "d": "overlay"}
    cap = {("u", "o"): 1, ("o", "d"): 1}
    with pytest.raises(TopologyError):
        Topology(nodes, cap, {("u", "d"): "o"})


def test_fixtures_round_trip(topo_b):
    again = load_scenario(scenario_to_dict(topo_b))
    assert [t.path for t in again.tunnels] == [t.path for t in topo_b.tunnels]
    assert again.usable == topo_b.usable


def test_topoB_sub_shape(topo_b):
    assert len(topo_b.topology.overlay_nodes) == 4
    assert len(topo_b.tunnels) >= 12
    # overlapping tunnels: some underlay link lies on several tunnels
    assert max(len(tunnels_through(topo_b.tunnels, e)) for e in topo_b.topology.links) >= 3


def test_topoC_pins_third_commodity():
    sc = load_scenario("topoC")
    pinned = [t.path for t in sc.tunnels if 3 in sc.usable[t.id]]
    assert pinned == [("15", "5", "6", "9", "12", "14", "16")]


# -- properties over random small graphs ------------------------------------

@st.composite
def random_graphs(draw):
    n_over = draw(st.integers(2, 4))
    n_under = draw(st.integers(1, 5))
    over = [f"o{i}" for i in range(n_over)]
    under = [str(i) for i in range(n_under)]
    nodes = {n: "overlay" for n in over} | {n: "underlay" for n in under}
    names = over + under
    pairs = [(a, b) for a in names for b in names if a != b]
    chosen = draw(st.lists(st.sampled_from(pairs), min_size=1, max_size=len(pairs), unique=True))
    cap = {e: draw(st.integers(1, 3)) for e in chosen}
    return nodes, cap


@given(random_graphs())
def test_routes_deterministic_and_shortest(g):
    nodes, cap = g
    r1 = derive_routes(nodes, cap)
    assert r1 == derive_routes(nodes, dict(reversed(list(cap.items()))))
    topo = Topology(nodes, cap, r1)
    adj = {}
    for a, b in cap:
        adj.setdefault(a, []).append(b)
    underlay = {n for n, k in nodes.items() if k == "underlay"}
    for (u, d) in r1:
        path = topo.route_path(u, d)
        assert len(set(path)) == len(path)
        assert len(path) - 1 == shortest_hops(adj, u, d, underlay)


@given(random_graphs())
def test_tunnel_invariants(g):
    nodes, cap = g
    topo = Topology(nodes, cap, derive_routes(nodes, cap))
    tunnels = enumerate_tunnels(topo)
    assert len({t.path for t in tunnels}) == len(tunnels)
    for t in tunnels:
        assert topo.is_overlay(t.path[0]) and topo.is_overlay(t.path[-1])
        assert all(not topo.is_overlay(n) for n in t.path[1:-1])
        assert len(set(t.path)) == len(t.path)
        assert all(e in cap for e in t.links)
        if len(t.path) > 2:
            assert topo.route_path(t.path[1], t.path[-1]) == t.path[1:]
    for e in cap:
        assert tunnels_through(tunnels, e) == {t.id for t in tunnels if e in t.links}
