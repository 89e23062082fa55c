import random
import xml.etree.ElementTree as ET

import networkx as nx
import numpy as np
import pytest
from hypothesis import given, strategies as st

from warc_distill.graph import GRAPHML_NS, build_graph, degree_stats, export_graphml, pagerank, read_graphml


def dense_pagerank(labels, edges, damping=0.85, iters=1000):
    """Textbook power iteration over an explicit n x n transition matrix."""
    n = len(labels)
    idx = {label: i for i, label in enumerate(labels)}
    W = np.zeros((n, n))
    for s, d, w in edges:
        W[idx[s], idx[d]] += w
    P = np.zeros((n, n))
    for i in range(n):
        total = W[i].sum()
        P[i] = W[i] / total if total > 0 else 1.0 / n
    x = np.full(n, 1.0 / n)
    for _ in range(iters):
        x = damping * x @ P + (1 - damping) / n
        x /= x.sum()
    return dict(zip(labels, x))


def random_edges(rng, n_nodes, n_edges, max_w=9):
    names = [f"d{i:02d}.org" for i in range(n_nodes)]
    return [(rng.choice(names), rng.choice(names), rng.randint(1, max_w)) for _ in range(n_edges)]


def test_cycle():
    g = build_graph([("a", "b", 1), ("b", "c", 1), ("c", "a", 1)])
    scores = pagerank(g)
    assert all(abs(v - 1 / 3) <= 1e-6 for v in scores.values())


def test_single_node():
    assert pagerank(build_graph([("a", "a", 3)])) == pytest.approx({"a": 1.0})


def test_empty_graph():
    g = build_graph([])
    assert pagerank(g) == {} and g.n_nodes == 0


@pytest.mark.parametrize("seed", range(5))
def test_random_graph_matches_dense_oracle(seed):
    rng = random.Random(seed)
    edges = random_edges(rng, 20, 45)
    g = build_graph(edges)
    got = pagerank(g, tol=1e-12, max_iter=1000)
    oracle = dense_pagerank(g.labels, edges)
    for label in g.labels:
        assert abs(got[label] - oracle[label]) <= 1e-6
    assert abs(sum(got.values()) - 1) <= 1e-9


@pytest.mark.parametrize("seed", range(3))
def test_random_graph_matches_networkx(seed):
    rng = random.Random(100 + seed)
    edges = random_edges(rng, 20, 60)
    g = build_graph(edges)
    got = pagerank(g, tol=1e-12, max_iter=1000)
    G = nx.DiGraph()
    G.add_nodes_from(g.labels)
    for s, d, w in edges:
        if G.has_edge(s, d):
            G[s][d]["weight"] += w
        else:
            G.add_edge(s, d, weight=w)
    ref = nx.pagerank(G, alpha=0.85, weight="weight", tol=1e-14, max_iter=2000)
    for label in g.labels:
        assert abs(got[label] - ref[label]) <= 1e-6


@given(st.lists(st.tuples(st.sampled_from("abcdefg"), st.sampled_from("abcdefg"), st.integers(1, 20)),
                min_size=1, max_size=30))
def test_pagerank_invariants(edges):
    g = build_graph(edges)
    scores = pagerank(g)
    n = g.n_nodes
    assert abs(sum(scores.values()) - 1) <= 1e-9
    assert min(scores.values()) >= (1 - 0.85) / n - 1e-12
    scaled = pagerank(build_graph([(s, d, w * 10) for s, d, w in edges]))
    for k in scores:
        assert abs(scores[k] - scaled[k]) <= 1e-9
    assert max(scores, key=lambda k: (scores[k], k)) == max(scaled, key=lambda k: (scaled[k], k))


def test_build_graph_merges_duplicates_and_orders():
    g = build_graph([("b", "a", 2), ("a", "b", 1), ("b", "a", 3)])
    assert g.labels == ["a", "b"]
    assert g.edges() == [(0, 1, 1), (1, 0, 5)]


def test_degree_examples():
    stats = degree_stats(build_graph([("a", "b", 6)]))
    assert (stats["a"].out_degree, stats["a"].weighted_out) == (1, 6)
    assert (stats["b"].in_degree, stats["b"].weighted_in) == (1, 6)
    loop = degree_stats(build_graph([("a", "a", 2)]))["a"]
    assert (loop.in_degree, loop.out_degree, loop.weighted_in, loop.weighted_out) == (1, 1, 2, 2)


def test_degree_matches_naive_tally():
    rng = random.Random(3)
    edges = random_edges(rng, 15, 50)
    merged = {}
    for s, d, w in edges:
        merged[(s, d)] = merged.get((s, d), 0) + w
    stats = degree_stats(build_graph(edges))
    for node, got in stats.items():
        assert got.out_degree == sum(1 for (s, _) in merged if s == node)
        assert got.in_degree == sum(1 for (_, d) in merged if d == node)
        assert got.weighted_out == sum(w for (s, _), w in merged.items() if s == node)
        assert got.weighted_in == sum(w for (_, d), w in merged.items() if d == node)


# -- GraphML ---------------------------------------------------------------------------------


def _parse(path):
    ns = {"g": GRAPHML_NS}
    root = ET.parse(path).getroot()
    return root, ns


def test_graphml_two_nodes(tmp_path):
    path = tmp_path / "g.graphml"
    export_graphml(build_graph([("a.org", "b.org", 7)]), str(path))
    root, ns = _parse(path)
    assert len(root.findall(".//g:node", ns)) == 2
    assert len(root.findall(".//g:edge", ns)) == 1
    keys = {k.get("id"): k.attrib for k in root.findall("g:key", ns)}
    assert keys["weight"]["attr.type"] == "long" and keys["weight"]["for"] == "edge"
    assert "pagerank" not in keys
    assert root.find("g:graph", ns).get("edgedefault") == "directed"


def test_graphml_escapes(tmp_path):
    path = tmp_path / "g.graphml"
    g = build_graph([("a&b.org", "<c>.org", 2), ("q\"uote's.org", "a&b.org", 1)])
    pagerank(g)
    export_graphml(g, str(path))
    text = path.read_text(encoding="utf-8")
    assert "a&amp;b.org" in text and "&lt;c&gt;.org" in text
    back = read_graphml(str(path))
    assert back.labels == g.labels and back.edges() == g.edges()


def test_graphml_round_trip_through_networkx(tmp_path):
    rng = random.Random(8)
    edges = random_edges(rng, 12, 30) + [("x&y.org", "d00.org", 4), ("dé.org", "x&y.org", 2)]
    g = build_graph(edges)
    pagerank(g)
    path = tmp_path / "g.graphml"
    export_graphml(g, str(path))
    G = nx.read_graphml(str(path))
    assert G.is_directed()
    assert G.number_of_nodes() == g.n_nodes and G.number_of_edges() == g.n_edges
    labels = {n: data["label"] for n, data in G.nodes(data=True)}
    assert sorted(labels.values()) == g.labels
    got = {(labels[s], labels[d]): data["weight"] for s, d, data in G.edges(data=True)}
    want = {(g.labels[s], g.labels[d]): w for s, d, w in g.edges()}
    assert got == want
    scores = g.score_map()
    for n, data in G.nodes(data=True):
        assert data["pagerank"] == scores[data["label"]]


def test_graphml_deterministic(tmp_path):
    edges = random_edges(random.Random(1), 10, 25)
    a, b = tmp_path / "a.graphml", tmp_path / "b.graphml"
    for p, es in ((a, edges), (b, list(reversed(edges)))):
        g = build_graph(es)
        pagerank(g)
        export_graphml(g, str(p))
    assert a.read_bytes() == b.read_bytes()


def test_graphml_control_characters_replaced(tmp_path):
    path = tmp_path / "g.graphml"
    export_graphml(build_graph([("bad\x01.org", "ok.org", 1)]), str(path))
    ET.parse(path)
    assert read_graphml(str(path)).labels[0] == "bad�.org"
