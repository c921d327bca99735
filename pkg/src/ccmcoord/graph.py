"""Influence graph assembly, leader/follower ranking and community detection."""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Optional

import networkx as nx
import numpy as np

from .ccm import CrossMapResult


@dataclass
class InfluenceGraph:
    """Directed graph whose edges are detected influence flows ``source -> mapper``."""

    nodes: dict[str, Optional[str]] = field(default_factory=dict)  # user -> label
    edges: dict[tuple[str, str], tuple[float, float]] = field(default_factory=dict)  # -> (rho_max, slope)

    def add_edge(self, source: str, target: str, rho_max: float, slope: float) -> None:
        if source == target:
            raise ValueError(f"self-loop on {source}")
        self.nodes.setdefault(source, None)
        self.nodes.setdefault(target, None)
        self.edges[(source, target)] = (rho_max, slope)

    def out_degree(self, u: str) -> int:
        return sum(1 for s, _ in self.edges if s == u)

    def in_degree(self, u: str) -> int:
        return sum(1 for _, t in self.edges if t == u)

    def degrees(self) -> dict[str, tuple[int, int]]:
        """``user -> (indegree, outdegree)``."""
        deg_in: Counter = Counter()
        deg_out: Counter = Counter()
        for s, t in self.edges:
            deg_out[s] += 1
            deg_in[t] += 1
        return {u: (deg_in[u], deg_out[u]) for u in self.nodes}

    def undirected_pairs(self) -> set[tuple[str, str]]:
        return {tuple(sorted(e)) for e in self.edges}

    def undirected(self) -> nx.Graph:
        g = nx.Graph()
        g.add_nodes_from(sorted(self.nodes))
        g.add_edges_from(sorted(self.undirected_pairs()))
        return g


def build_graph(
    results: Iterable[CrossMapResult],
    labels: Optional[Mapping[str, str]] = None,
    nodes: Optional[Iterable[str]] = None,
) -> InfluenceGraph:
    graph = InfluenceGraph()
    for u in nodes or ():
        graph.nodes[u] = None
    for r in results:
        graph.nodes.setdefault(r.source, None)
        graph.nodes.setdefault(r.mapper, None)
        if r.decision and r.source != r.mapper:
            graph.add_edge(r.source, r.mapper, r.rho_max, r.slope)
    if labels:
        for u in graph.nodes:
            graph.nodes[u] = labels.get(u)
    return graph


def mark_coordinated(graph: InfluenceGraph) -> set[str]:
    """Users that take part in at least one influence flow."""
    return {u for e in graph.edges for u in e}


@dataclass(frozen=True)
class NodeDegreeReport:
    user_id: str
    indegree: int
    outdegree: int

    @property
    def net_degree(self) -> int:
        return self.outdegree - self.indegree


def rank_by_net_degree(graph: InfluenceGraph) -> list[NodeDegreeReport]:
    """Leaders first: net degree desc, then outdegree desc, then user id."""
    reports = [NodeDegreeReport(u, i, o) for u, (i, o) in graph.degrees().items()]
    return sorted(reports, key=lambda r: (-r.net_degree, -r.outdegree, r.user_id))


# --- Louvain ---------------------------------------------------------------

def modularity(graph: nx.Graph, partition: Mapping, resolution: float = 1.0) -> float:
    m = graph.size(weight="weight")
    if m == 0:
        return 0.0
    internal: Counter = Counter()
    degree_sum: Counter = Counter()
    for u, v, w in graph.edges(data="weight", default=1.0):
        if partition[u] == partition[v]:
            internal[partition[u]] += w
    for u, d in graph.degree(weight="weight"):
        degree_sum[partition[u]] += d
    return sum(internal[c] / m - resolution * (degree_sum[c] / (2 * m)) ** 2 for c in degree_sum)


def _one_level(adj: list[dict[int, float]], degree: list[float], m: float, resolution: float) -> tuple[list[int], bool]:
    """Greedy local moving over nodes in index order until no move improves modularity."""
    n = len(adj)
    comm = list(range(n))
    total = list(degree)
    moved_any = False
    improved = True
    while improved:
        improved = False
        for u in range(n):
            links: dict[int, float] = {}
            for v, w in adj[u].items():
                if v != u:
                    links[comm[v]] = links.get(comm[v], 0.0) + w
            home = comm[u]
            k = degree[u]
            total[home] -= k
            remove_cost = -links.get(home, 0.0) / m + resolution * total[home] * k / (2 * m * m)
            best, best_gain = home, 0.0
            for c, w in links.items():
                gain = remove_cost + w / m - resolution * total[c] * k / (2 * m * m)
                if gain > best_gain:
                    best, best_gain = c, gain
            total[best] += k
            if best != home:
                comm[u] = best
                improved = moved_any = True
    return comm, moved_any


def louvain(graph: nx.Graph, resolution: float = 1.0) -> dict:
    """Louvain modularity maximisation with nodes visited in sorted order.

    Returns ``node -> community index``; community indices are numbered by
    the smallest member in sorted node order.
    """
    order = sorted(graph.nodes)
    if not order:
        raise ValueError("community detection needs a non-empty graph")
    index = {u: i for i, u in enumerate(order)}
    adj: list[dict[int, float]] = [dict() for _ in order]
    for u, v, w in graph.edges(data="weight", default=1.0):
        i, j = index[u], index[v]
        adj[i][j] = adj[i].get(j, 0.0) + w
        if i != j:
            adj[j][i] = adj[j].get(i, 0.0) + w
    degree = [sum(w * (2 if j == i else 1) for j, w in a.items()) for i, a in enumerate(adj)]
    m = sum(degree) / 2
    membership = list(range(len(order)))  # original node -> current super node
    if m == 0:
        return {u: i for i, u in enumerate(order)}

    while True:
        comm, moved = _one_level(adj, degree, m, resolution)
        if not moved:
            break
        relabel: dict[int, int] = {}
        for c in comm:
            relabel.setdefault(c, len(relabel))
        new_adj: list[dict[int, float]] = [dict() for _ in relabel]
        for i, a in enumerate(adj):
            ci = relabel[comm[i]]
            for j, w in a.items():
                cj = relabel[comm[j]]
                if j < i:
                    continue
                new_adj[ci][cj] = new_adj[ci].get(cj, 0.0) + w
                if ci != cj:
                    new_adj[cj][ci] = new_adj[cj].get(ci, 0.0) + w
        new_degree = [0.0] * len(relabel)
        for i, d in enumerate(degree):
            new_degree[relabel[comm[i]]] += d
        membership = [relabel[comm[s]] for s in membership]
        adj, degree = new_adj, new_degree

    first_seen: dict[int, int] = {}
    for s in membership:
        first_seen.setdefault(s, len(first_seen))
    return {u: first_seen[membership[index[u]]] for u in order}


def detect_communities(graph: InfluenceGraph, resolution: float = 1.0) -> dict[str, int]:
    """Louvain on the undirected projection of the influence graph."""
    return louvain(graph.undirected(), resolution)


# --- engagement counts -----------------------------------------------------

_RETWEET = re.compile(r"^\s*RT\s+@(\w+)", re.IGNORECASE)
_MENTION = re.compile(r"@(\w+)")


def engagement_counts(events, users: Iterable[str]) -> dict[str, dict[str, float]]:
    """Retweet and mention counts per user, read from ``RT @user`` / ``@user`` in event text.

    Percentiles are the share of listed users with a count at or below the
    user's own.
    """
    users = list(users)
    retweets: Counter = Counter()
    mentions: Counter = Counter()
    for ev in events:
        if not ev.text:
            continue
        rt = _RETWEET.match(ev.text)
        if rt:
            retweets[rt.group(1)] += 1
        for name in _MENTION.findall(ev.text):
            mentions[name] += 1
    out = {}
    rt_all = np.array([retweets[u] for u in users])
    mn_all = np.array([mentions[u] for u in users])
    for u in users:
        out[u] = {
            "retweets": retweets[u],
            "retweet_percentile": float(np.mean(rt_all <= retweets[u])) if users else 0.0,
            "mentions": mentions[u],
            "mention_percentile": float(np.mean(mn_all <= mentions[u])) if users else 0.0,
        }
    return out


# --- export ----------------------------------------------------------------

def _node_attrs(graph: InfluenceGraph, communities=None, topics=None) -> dict[str, dict]:
    net = {r.user_id: r.net_degree for r in rank_by_net_degree(graph)}
    attrs = {}
    for u in sorted(graph.nodes):
        a = {"net_degree": net[u]}
        if graph.nodes[u] is not None:
            a["label"] = graph.nodes[u]
        if communities is not None and u in communities:
            a["community"] = int(communities[u])
        if topics is not None and u in topics:
            a["topic"] = int(topics[u])
        attrs[u] = a
    return attrs


def to_networkx(graph: InfluenceGraph, communities=None, topics=None) -> nx.DiGraph:
    g = nx.DiGraph()
    for u, a in _node_attrs(graph, communities, topics).items():
        g.add_node(u, **a)
    for (s, t), (rho, _) in sorted(graph.edges.items()):
        g.add_edge(s, t, rho_max=float(rho))
    return g


def write_graphml(graph: InfluenceGraph, path, communities=None, topics=None) -> None:
    nx.write_graphml(to_networkx(graph, communities, topics), str(path))


def _dot_id(s: str) -> str:
    return '"' + str(s).replace("\\", "\\\\").replace('"', '\\"') + '"'


def write_dot(graph: InfluenceGraph, path, communities=None, topics=None) -> None:
    lines = ["digraph influence {"]
    for u, a in _node_attrs(graph, communities, topics).items():
        body = ", ".join(f"{k}={_dot_id(v)}" for k, v in a.items())
        lines.append(f"  {_dot_id(u)} [{body}];")
    for (s, t), (rho, _) in sorted(graph.edges.items()):
        lines.append(f"  {_dot_id(s)} -> {_dot_id(t)} [rho_max={_dot_id(repr(float(rho)))}];")
    lines.append("}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
