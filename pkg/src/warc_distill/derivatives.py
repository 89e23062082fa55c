"""The three standard derivatives and their download formats.

* domain distribution: valid pages counted per domain, ``<id>-fullurls.csv``
* domain webgraph: (source domain, destination domain, count) above a
  threshold, ``<id>-links.csv`` plus ``<id>-gephi.graphml``
* plain text: one row per valid page, ``<id>-fulltext.csv`` and ``.jsonl``
"""

from __future__ import annotations

import logging
import os
import time
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from . import formats
from .archive_io import SourceStats
from .errors import ConfigError
from .graph import build_graph, export_graphml, pagerank
from .pipeline import Aggregate, Extract, Filter, Plan, RunOptions, Sink, run_plans

log = logging.getLogger(__name__)

DEFAULT_MIN_EXCLUSIVE = 5
DISTRIBUTION_COLUMNS = ("domain", "count")
WEBGRAPH_COLUMNS = ("src_domain", "dest_domain", "count")
TEXT_COLUMNS = ("crawl_date", "domain", "url", "text")
DERIVATIVES = ("domains", "webgraph", "text")


@dataclass
class DomainDistribution:
    rows: list  # [(domain, count)]
    columns: tuple = DISTRIBUTION_COLUMNS

    def top(self, n: int = 10) -> list:
        return self.rows[:n]

    def total(self) -> int:
        return sum(c for _, c in self.rows)


@dataclass
class DomainWebgraphEdges:
    rows: list  # [(src_domain, dest_domain, count)]
    threshold_used: int = DEFAULT_MIN_EXCLUSIVE
    columns: tuple = WEBGRAPH_COLUMNS

    def total(self) -> int:
        return sum(c for _, _, c in self.rows)


@dataclass
class PlainTextRows:
    rows: list  # [(crawl_date, domain, url, text)]
    columns: tuple = TEXT_COLUMNS


def distribution_plan(sinks: Sequence[Sink] = ()) -> Plan:
    return Plan(
        "pages",
        (Filter("field_nonempty", {"fields": ["domain"]}), Aggregate(("domain",))),
        tuple(sinks),
    )


def webgraph_plan(min_exclusive: int = DEFAULT_MIN_EXCLUSIVE, sinks: Sequence[Sink] = ()) -> Plan:
    if not isinstance(min_exclusive, int) or min_exclusive < 0:
        raise ConfigError("min_exclusive must be a non-negative integer")
    return Plan(
        "webgraph",
        (
            Extract("domains", {"fields": {"src": "src_domain", "dest": "dest_domain"}}),
            Filter("field_nonempty", {"fields": ["src_domain", "dest_domain"]}),
            Aggregate(("src_domain", "dest_domain")),
            Filter("count_gt", {"min_exclusive": min_exclusive}),
        ),
        tuple(sinks),
    )


def plain_text_plan(sinks: Sequence[Sink] = ()) -> Plan:
    # Same page set as the distribution, so text rows always sum to its counts.
    return Plan("pages", (Filter("field_nonempty", {"fields": ["domain"]}), Extract("plain_text")), tuple(sinks))


def derive_domain_distribution(source, workers: int = 1) -> DomainDistribution:
    result = run_plans([distribution_plan()], source, RunOptions(workers=workers))[0]
    return DomainDistribution([tuple(r) for r in result.rows])


def derive_domain_webgraph(source, min_exclusive: int = DEFAULT_MIN_EXCLUSIVE, workers: int = 1) -> DomainWebgraphEdges:
    result = run_plans([webgraph_plan(min_exclusive)], source, RunOptions(workers=workers))[0]
    return DomainWebgraphEdges([tuple(r) for r in result.rows], min_exclusive)


def derive_plain_text(source, workers: int = 1) -> PlainTextRows:
    """In-memory plain-text rows; use ``derive_all`` to stream large collections to disk."""
    result = run_plans([plain_text_plan()], source, RunOptions(workers=workers))[0]
    return PlainTextRows([tuple(r) for r in result.rows])


def _columns_of(rows, columns):
    if columns is not None:
        return tuple(columns)
    cols = getattr(rows, "columns", None)
    if cols is None:
        raise ConfigError("rows carry no column names; pass columns=")
    return tuple(cols)


def write_csv(rows, path: str, columns: Sequence[str] | None = None) -> int:
    """RFC 4180 CSV with a header row, UTF-8, LF line endings. Returns rows written."""
    cols = _columns_of(rows, columns)
    return formats.write_rows(path, "csv", cols, getattr(rows, "rows", rows))


def write_jsonl(rows, path: str, columns: Sequence[str] | None = None) -> int:
    """One JSON object per line, keys in column order."""
    cols = _columns_of(rows, columns)
    return formats.write_rows(path, "jsonl", cols, getattr(rows, "rows", rows))


def output_paths(out_dir: str, collection_id: str) -> dict:
    join = os.path.join
    return {
        "domains": join(out_dir, f"{collection_id}-fullurls.csv"),
        "webgraph": join(out_dir, f"{collection_id}-links.csv"),
        "graphml": join(out_dir, f"{collection_id}-gephi.graphml"),
        "text": join(out_dir, f"{collection_id}-fulltext.csv"),
        "text_jsonl": join(out_dir, f"{collection_id}-fulltext.jsonl"),
    }


def load_edges_csv(path: str, threshold_used: int = DEFAULT_MIN_EXCLUSIVE) -> DomainWebgraphEdges:
    header, rows = formats.read_csv(path)
    if header and tuple(header) != WEBGRAPH_COLUMNS:
        raise ConfigError(f"{path}: expected columns {WEBGRAPH_COLUMNS}, found {tuple(header)}")
    return DomainWebgraphEdges([(s, d, int(c)) for s, d, c in rows], threshold_used)


def write_graphml_from_edges(edges: DomainWebgraphEdges, path: str) -> dict:
    graph = build_graph(edges)
    if graph.n_nodes:
        pagerank(graph)
    export_graphml(graph, path)
    return {"nodes": graph.n_nodes, "edges": graph.n_edges}


@dataclass
class DeriveConfig:
    collection_id: str = "collection"
    out_dir: str = "."
    which: tuple = DERIVATIVES
    min_exclusive: int = DEFAULT_MIN_EXCLUSIVE
    workers: int = 1
    format_hint: str = "auto"


@dataclass
class DeriveReport:
    files: dict = field(default_factory=dict)  # product -> path
    rows: dict = field(default_factory=dict)  # product -> row count
    totals: dict = field(default_factory=dict)
    stats: SourceStats = field(default_factory=SourceStats)
    elapsed: float = 0.0

    def summary(self) -> dict:
        return {
            "records_read": self.stats.records_read,
            "records_skipped": self.stats.records_skipped,
            "files_skipped": self.stats.files_skipped,
            "bytes_read": self.stats.bytes_read,
            "rows": dict(self.rows),
            "totals": dict(self.totals),
            "elapsed_s": round(self.elapsed, 3),
        }


def derive_all(source, config: DeriveConfig) -> DeriveReport:
    """Compute the requested derivatives in a single scan and write their files."""
    which = tuple(config.which)
    unknown = set(which) - set(DERIVATIVES)
    if unknown or not which:
        raise ConfigError(f"unknown derivative(s) {sorted(unknown)}; choose from {DERIVATIVES}")
    paths = output_paths(config.out_dir, config.collection_id)
    plans, names = [], []
    if "domains" in which:
        plans.append(distribution_plan([Sink(paths["domains"], "csv")]))
        names.append("domains")
    if "webgraph" in which:
        plans.append(webgraph_plan(config.min_exclusive, [Sink(paths["webgraph"], "csv")]))
        names.append("webgraph")
    if "text" in which:
        plans.append(plain_text_plan([Sink(paths["text"], "csv"), Sink(paths["text_jsonl"], "jsonl")]))
        names.append("text")
    started = time.perf_counter()
    results = run_plans(plans, source, RunOptions(workers=config.workers, format_hint=config.format_hint))
    report = DeriveReport(stats=results[0].stats if results else SourceStats())
    for name, result in zip(names, results):
        report.rows[name] = result.row_count
        if name == "domains":
            report.files["domains"] = paths["domains"]
            report.totals["pages"] = sum(r[-1] for r in result.rows)
        elif name == "webgraph":
            report.files["webgraph"] = paths["webgraph"]
            edges = DomainWebgraphEdges([tuple(r) for r in result.rows], config.min_exclusive)
            report.totals["edge_weight"] = edges.total()
            info = write_graphml_from_edges(edges, paths["graphml"])
            report.files["graphml"] = paths["graphml"]
            report.rows["graphml_nodes"] = info["nodes"]
        else:
            report.files["text"] = paths["text"]
            report.files["text_jsonl"] = paths["text_jsonl"]
    report.elapsed = time.perf_counter() - started
    return report
