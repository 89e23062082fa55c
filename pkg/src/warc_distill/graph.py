"""Domain webgraph analytics: construction, weighted PageRank, degrees, GraphML."""

from __future__ import annotations

import re
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from typing import Iterable
from xml.sax.saxutils import escape, quoteattr

import numpy as np

from .formats import atomic_output

GRAPHML_NS = "http://graphml.graphdrawing.org/xmlns"
_XML_INVALID = re.compile("[\x00-\x08\x0b\x0c\x0e-\x1f￾￿]")


@dataclass
class DomainGraph:
    """Directed, weighted domain graph with dense node ids.

    Node ids follow the sorted order of domain labels; edges are unique per
    (src, dest) pair and sorted by id.
    """

    labels: list = field(default_factory=list)
    src: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    dst: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    weight: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    scores: np.ndarray | None = None

    @property
    def n_nodes(self) -> int:
        return len(self.labels)

    @property
    def n_edges(self) -> int:
        return len(self.src)

    @property
    def nodes(self) -> dict:
        return {label: i for i, label in enumerate(self.labels)}

    def edges(self) -> list[tuple[int, int, int]]:
        return list(zip(self.src.tolist(), self.dst.tolist(), self.weight.tolist()))

    def score_map(self) -> dict:
        if self.scores is None:
            return {}
        return dict(zip(self.labels, self.scores.tolist()))


def build_graph(edges: Iterable) -> DomainGraph:
    """Graph from (src_domain, dest_domain, count) rows.

    Accepts a DomainWebgraphEdges or any iterable of triples. Repeated pairs
    are summed; self-loops are kept.
    """
    rows = getattr(edges, "rows", edges)
    weights: dict = {}
    for src, dst, count in rows:
        weights[(src, dst)] = weights.get((src, dst), 0) + int(count)
    labels = sorted({d for pair in weights for d in pair})
    index = {label: i for i, label in enumerate(labels)}
    triples = sorted((index[s], index[d], w) for (s, d), w in weights.items())
    if triples:
        arr = np.array(triples, dtype=np.int64)
        return DomainGraph(labels, arr[:, 0].copy(), arr[:, 1].copy(), arr[:, 2].copy())
    return DomainGraph(labels)


def pagerank(graph: DomainGraph, damping: float = 0.85, tol: float = 1e-8, max_iter: int = 100) -> dict:
    """Weighted PageRank by power iteration.

    A node's outgoing mass splits in proportion to edge weight; dangling
    nodes spread theirs uniformly. Stops when the L1 change drops below
    ``tol`` or after ``max_iter`` rounds. Scores are attached to the graph
    and returned as {domain: score}.
    """
    n = graph.n_nodes
    if n == 0:
        graph.scores = np.zeros(0)
        return {}
    weight = graph.weight.astype(np.float64)
    out_weight = np.bincount(graph.src, weights=weight, minlength=n)
    dangling = out_weight == 0
    share = weight / np.where(out_weight[graph.src] > 0, out_weight[graph.src], 1.0)
    x = np.full(n, 1.0 / n)
    for _ in range(max_iter):
        flow = np.bincount(graph.dst, weights=x[graph.src] * share, minlength=n)
        nxt = damping * (flow + x[dangling].sum() / n) + (1.0 - damping) / n
        nxt /= nxt.sum()
        delta = np.abs(nxt - x).sum()
        x = nxt
        if delta < tol:
            break
    graph.scores = x
    return graph.score_map()


@dataclass(frozen=True)
class DegreeStats:
    in_degree: int
    out_degree: int
    weighted_in: int
    weighted_out: int


def degree_stats(graph: DomainGraph) -> dict:
    """Per-domain degree tallies. A self-loop counts toward both in and out."""
    n = graph.n_nodes
    ind = np.bincount(graph.dst, minlength=n)
    outd = np.bincount(graph.src, minlength=n)
    w_in = np.bincount(graph.dst, weights=graph.weight, minlength=n)
    w_out = np.bincount(graph.src, weights=graph.weight, minlength=n)
    return {
        label: DegreeStats(int(ind[i]), int(outd[i]), int(w_in[i]), int(w_out[i]))
        for i, label in enumerate(graph.labels)
    }


def _xml_text(value: str) -> str:
    return escape(_XML_INVALID.sub("�", value))


def export_graphml(graph: DomainGraph, path: str) -> None:
    """Write a directed GraphML file readable by Gephi.

    Nodes carry ``label`` and, once PageRank has run, ``pagerank``; edges
    carry an integer ``weight``.
    """
    with_scores = graph.scores is not None and len(graph.scores) == graph.n_nodes
    with atomic_output(path) as fh:
        fh.write('<?xml version="1.0" encoding="UTF-8"?>\n')
        fh.write(
            f'<graphml xmlns="{GRAPHML_NS}" '
            'xmlns:xsi="http://www.w3.org/2001/XMLSchema-instance" '
            f'xsi:schemaLocation="{GRAPHML_NS} {GRAPHML_NS}/1.0/graphml.xsd">\n'
        )
        fh.write('  <key id="label" for="node" attr.name="label" attr.type="string"/>\n')
        if with_scores:
            fh.write('  <key id="pagerank" for="node" attr.name="pagerank" attr.type="double"/>\n')
        fh.write('  <key id="weight" for="edge" attr.name="weight" attr.type="long"/>\n')
        fh.write('  <graph id="G" edgedefault="directed">\n')
        for i, label in enumerate(graph.labels):
            fh.write(f'    <node id="n{i}">\n      <data key="label">{_xml_text(label)}</data>\n')
            if with_scores:
                fh.write(f'      <data key="pagerank">{float(graph.scores[i])!r}</data>\n')
            fh.write("    </node>\n")
        for k, (s, d, w) in enumerate(graph.edges()):
            fh.write(
                f"    <edge id=\"e{k}\" source={quoteattr(f'n{s}')} target={quoteattr(f'n{d}')}>\n"
                f'      <data key="weight">{int(w)}</data>\n    </edge>\n'
            )
        fh.write("  </graph>\n</graphml>\n")


def read_graphml(path: str) -> DomainGraph:
    """Parse a GraphML file written by ``export_graphml`` back into a graph."""
    ns = {"g": GRAPHML_NS}
    root = ET.parse(path).getroot()
    keys = {k.get("id"): k.get("attr.name") for k in root.findall("g:key", ns)}
    graph_el = root.find("g:graph", ns)
    ids, labels, scores = [], [], []
    for node in graph_el.findall("g:node", ns):
        data = {keys.get(d.get("key")): d.text or "" for d in node.findall("g:data", ns)}
        ids.append(node.get("id"))
        labels.append(data.get("label", ""))
        if "pagerank" in data:
            scores.append(float(data["pagerank"]))
    pos = {node_id: i for i, node_id in enumerate(ids)}
    triples = []
    for edge in graph_el.findall("g:edge", ns):
        data = {keys.get(d.get("key")): d.text for d in edge.findall("g:data", ns)}
        triples.append((pos[edge.get("source")], pos[edge.get("target")], int(data.get("weight") or 1)))
    arr = np.array(triples, dtype=np.int64).reshape(-1, 3)
    return DomainGraph(
        labels,
        arr[:, 0].copy(),
        arr[:, 1].copy(),
        arr[:, 2].copy(),
        np.array(scores) if len(scores) == len(labels) and labels else None,
    )
