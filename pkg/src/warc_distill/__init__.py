"""Streaming analytics over WARC/ARC web archive collections."""

from .archive_io import ArchiveRecord, ArchiveSource, SourceStats, open_source, next_record, split_http
from .derivatives import (
    DeriveConfig,
    derive_all,
    derive_domain_distribution,
    derive_domain_webgraph,
    derive_plain_text,
)
from .errors import ConfigError, ProcessingError
from .extract import detect_mime, extract_domain, extract_links, extract_text, is_valid_page
from .graph import DomainGraph, build_graph, degree_stats, export_graphml, pagerank
from .pipeline import Aggregate, Extract, Filter, Plan, Sink, count_items, run, run_plans
from .registry import CollectionManifest, JobRecord, Registry

__version__ = "0.1.0"
