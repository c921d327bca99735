import itertools

import networkx as nx
import numpy as np
import pytest

from ccmcoord.ccm import CrossMapResult
from ccmcoord.graph import (
    InfluenceGraph, build_graph, detect_communities, engagement_counts, louvain, mark_coordinated,
    modularity, rank_by_net_degree, to_networkx, write_dot, write_graphml,
)
from ccmcoord.ingest import Event

from oracles import set_partitions


def result(s, m, decision, rho=0.8, slope=0.01):
    return CrossMapResult(s, m, (), (), slope, rho, decision)


def test_build_graph_directions():
    g = build_graph([result("a", "b", True), result("b", "a", False)])
    assert list(g.edges) == [("a", "b")]
    assert mark_coordinated(g) == {"a", "b"}


def test_no_decisions():
    g = build_graph([result("a", "b", False), result("b", "a", False)], nodes=["c"])
    assert g.edges == {} and set(g.nodes) == {"a", "b", "c"}
    assert mark_coordinated(g) == set()
    assert mark_coordinated(InfluenceGraph()) == set()


def test_self_loop_rejected():
    with pytest.raises(ValueError):
        InfluenceGraph().add_edge("a", "a", 1.0, 1.0)


def test_net_degree_ranking():
    g = InfluenceGraph()
    for i in range(22):
        g.add_edge("u1", f"x{i}", 0.9, 0.1)
    for i in range(8):
        g.add_edge(f"y{i}", "u1", 0.9, 0.1)
    for i in range(8):
        g.add_edge("u2", f"z{i}", 0.9, 0.1)
    g.nodes["iso"] = None
    ranked = rank_by_net_degree(g)
    assert (ranked[0].user_id, ranked[0].net_degree, ranked[0].indegree, ranked[0].outdegree) == ("u1", 14, 8, 22)
    assert ranked[1].user_id == "u2" and ranked[1].net_degree == 8
    assert {r.user_id: r.net_degree for r in ranked}["iso"] == 0


def test_star_graph():
    g = InfluenceGraph()
    for i in range(5):
        g.add_edge("hub", f"leaf{i}", 0.9, 0.1)
    net = {r.user_id: r.net_degree for r in rank_by_net_degree(g)}
    assert net.pop("hub") == 5 and set(net.values()) == {-1}


def test_modularity_matches_networkx():
    rng = np.random.default_rng(0)
    for seed in range(5):
        graph = nx.gnp_random_graph(15, 0.3, seed=seed)
        part = {u: int(rng.integers(0, 3)) for u in graph}
        comms = [{u for u in graph if part[u] == c} for c in set(part.values())]
        assert modularity(graph, part) == pytest.approx(nx.community.modularity(graph, comms))


def test_two_triangles():
    g = nx.Graph([(0, 1), (1, 2), (0, 2), (3, 4), (4, 5), (3, 5)])
    part = louvain(g)
    assert len(set(part.values())) == 2
    assert part[0] == part[1] == part[2] != part[3]


def test_complete_graph_single_community():
    assert set(louvain(nx.complete_graph(5)).values()) == {0}


def test_clique_chain_against_block_enumeration():
    cliques = [list(range(i * 6, i * 6 + 6)) for i in range(3)]
    g = nx.Graph()
    for c in cliques:
        g.add_edges_from(itertools.combinations(c, 2))
    g.add_edge(5, 6)
    g.add_edge(11, 12)
    # oracle: best modularity over every merge of the three cliques
    best = max(
        set_partitions([0, 1, 2]),
        key=lambda blocks: modularity(g, {u: b for b, group in enumerate(blocks) for c in group for u in cliques[c]}),
    )
    assert len(best) == 3
    part = louvain(g)
    assert len(set(part.values())) == 3
    assert all(len({part[u] for u in c}) == 1 for c in cliques)


def test_louvain_local_optimum_on_small_graphs():
    # no single-node move may improve the returned partition
    for seed in range(5):
        g = nx.gnp_random_graph(8, 0.4, seed=seed)
        part = louvain(g)
        q = modularity(g, part)
        for u in g:
            for c in set(part.values()):
                moved = dict(part)
                moved[u] = c
                assert modularity(g, moved) <= q + 1e-12
        # and the enumerated optimum bounds it
        nodes = list(g)
        best = max(modularity(g, {u: b for b, blk in enumerate(p) for u in blk}) for p in set_partitions(nodes))
        assert q <= best + 1e-12


def test_louvain_is_deterministic_and_labels_canonical():
    g = nx.relabel_nodes(nx.karate_club_graph(), lambda u: f"n{u:02d}")
    a, b = louvain(g), louvain(g)
    assert a == b
    assert a["n00"] == 0
    assert modularity(g, a) > 0.38


def test_louvain_errors_and_edgeless():
    with pytest.raises(ValueError):
        louvain(nx.Graph())
    g = nx.Graph()
    g.add_nodes_from("abc")
    assert louvain(g) == {"a": 0, "b": 1, "c": 2}


def test_detect_communities_uses_undirected_projection():
    g = InfluenceGraph()
    for s, t in [("a", "b"), ("b", "c"), ("c", "a"), ("d", "e"), ("e", "f"), ("f", "d")]:
        g.add_edge(s, t, 0.9, 0.1)
    part = detect_communities(g)
    assert part["a"] == part["b"] == part["c"] != part["d"]


def test_engagement_counts():
    events = [Event("x", 1, "RT @alice: hi @bob"), Event("y", 2, "@alice hello"), Event("z", 3, None)]
    out = engagement_counts(events, ["alice", "bob", "carol"])
    assert out["alice"]["retweets"] == 1 and out["alice"]["mentions"] == 2
    assert out["bob"]["mentions"] == 1 and out["carol"]["mentions"] == 0
    assert out["alice"]["mention_percentile"] == 1.0


def test_exports(tmp_path):
    g = build_graph([result("a", "b", True), result("b", "a", False)], labels={"a": "coordinated"}, nodes=["c"])
    comms = detect_communities(g)
    write_graphml(g, tmp_path / "g.graphml", comms, {"a": 1, "b": 1})
    back = nx.read_graphml(tmp_path / "g.graphml")
    assert set(back.nodes) == {"a", "b", "c"} and list(back.edges) == [("a", "b")]
    assert back.nodes["a"]["label"] == "coordinated" and back.nodes["a"]["net_degree"] == 1
    write_dot(g, tmp_path / "g.dot", comms)
    text = (tmp_path / "g.dot").read_text()
    assert text.startswith("digraph") and '"a" -> "b"' in text
    assert to_networkx(g).number_of_edges() == 1
