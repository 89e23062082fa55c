"""Filter / extract / aggregate plans evaluated over archive views.

A ``Plan`` names a view (``pages``, ``webgraph`` or ``raw``), an ordered list
of stages and optional sinks. Stages refer to registered predicates and
mappers by id so a plan serializes to JSON; library callers may also pass
plain callables.

Execution shards by file. Every worker scans whole files and returns either
a partial aggregate or rows spooled to part files. The parent merges the
partials and sorts them canonically (count descending, key ascending), and it
concatenates part files in file order, so output bytes do not depend on the
number of workers.
"""

from __future__ import annotations

import json
import logging
import multiprocessing
import os
import re
import shutil
import tempfile
from dataclasses import dataclass, field
from functools import cached_property
from typing import Any, Callable, Iterable, Iterator, Sequence

from . import formats
from .archive_io import (
    ARC_KIND,
    DEFAULT_MAX_RECORD_BYTES,
    ArchiveRecord,
    ArchiveSource,
    HttpPayload,
    SourceStats,
    iter_file,
    open_source,
    split_http,
)
from .errors import AggregateOverflow, ConfigError, ProcessingError
from .extract import (
    MimeClass,
    checksum_payload,
    decode_html,
    detect_mime,
    extract_domain,
    extract_links,
    extract_text,
    is_valid_page,
    keyword_counts,
)

log = logging.getLogger(__name__)

VIEWS = ("pages", "webgraph", "raw")
REDUCERS = ("count", "sum", "max", "min")
DEFAULT_MAX_GROUPS = 2_000_000

PAGE_COLUMNS = ("crawl_date", "crawl_ts", "domain", "url", "mime", "status")
LINK_COLUMNS = ("crawl_date", "src", "dest", "anchor")
RAW_COLUMNS = ("crawl_ts", "kind", "url", "mime", "status", "length")
VIEW_COLUMNS = {"pages": PAGE_COLUMNS, "webgraph": LINK_COLUMNS, "raw": RAW_COLUMNS}


# -- view records ----------------------------------------------------------------


@dataclass(frozen=True)
class LinkRecord:
    crawl_date: str
    src: str
    dest: str
    anchor: str


@dataclass(frozen=True)
class PageRecord:
    crawl_ts: str
    url: str
    domain: str
    mime: MimeClass
    status: int | None
    content: bytes
    charset: str | None = None

    @property
    def crawl_date(self) -> str:
        return self.crawl_ts[:8]

    @cached_property
    def html(self) -> str:
        return decode_html(self.content, self.charset)

    @cached_property
    def text(self) -> str:
        return extract_text(self.html)

    @cached_property
    def links(self) -> list[LinkRecord]:
        date = self.crawl_date
        return [LinkRecord(date, h.src, h.dest, h.anchor) for h in extract_links(self.url, self.html)]


def page_from_record(record: ArchiveRecord, http: HttpPayload | None = None) -> PageRecord | None:
    """Build the PageRecord for ``record`` if it passes the valid-page filter."""
    if record.kind not in ("response", ARC_KIND):
        return None
    http = http if http is not None else split_http(record)
    if not is_valid_page(record, http):
        return None
    url = record.target_uri or ""
    declared = record.declared_mime if record.kind == ARC_KIND else None
    mime = detect_mime(http, url, http.body[:1024], declared)
    return PageRecord(record.timestamp, url, extract_domain(url), mime, http.status, http.body, http.charset)


@dataclass(frozen=True)
class RawRecord:
    record: ArchiveRecord

    @property
    def kind(self) -> str:
        return self.record.kind

    @property
    def url(self) -> str:
        return self.record.target_uri or ""

    @property
    def crawl_ts(self) -> str:
        return self.record.timestamp

    @property
    def crawl_date(self) -> str:
        return self.record.timestamp[:8]

    @property
    def length(self) -> int:
        return self.record.content_length

    @cached_property
    def http(self) -> HttpPayload | None:
        if self.record.kind in ("response", ARC_KIND):
            return split_http(self.record)
        return None

    @property
    def status(self) -> int | None:
        return self.http.status if self.http is not None else None

    @property
    def body(self) -> bytes:
        return self.http.body if self.http is not None else self.record.payload

    @cached_property
    def mime(self) -> MimeClass:
        declared = self.record.declared_mime if self.record.kind == ARC_KIND else None
        return detect_mime(self.http, self.url, self.body[:1024], declared)

    @cached_property
    def md5(self) -> str:
        return checksum_payload(self.body)


def get_field(item: Any, name: str):
    if isinstance(item, dict):
        return item.get(name)
    return getattr(item, name, None)


def _plain(value):
    if value is None or isinstance(value, (str, int, float, bool)):
        return value
    return str(value)


def pages_view(source: ArchiveSource | Iterable[ArchiveRecord]) -> Iterator[PageRecord]:
    """Valid HTML pages of ``source``, in file and record order."""
    for record in source:
        page = page_from_record(record)
        if page is not None:
            yield page


def webgraph_view(source: ArchiveSource | Iterable[ArchiveRecord]) -> Iterator[LinkRecord]:
    """Every hyperlink of every valid page, tagged with the page's crawl date."""
    for page in pages_view(source):
        yield from page.links


# -- stage registry ----------------------------------------------------------------

PREDICATES: dict[str, Callable] = {}
MAPPERS: dict[str, Callable] = {}


def predicate(name: str):
    def register(factory):
        PREDICATES[name] = factory
        return factory

    return register


def mapper(name: str):
    def register(factory):
        MAPPERS[name] = factory
        return factory

    return register


def _param(params: dict, name: str, kind=None, default=..., where: str = ""):
    if name not in params:
        if default is ...:
            raise ConfigError(f"{where}: missing parameter {name!r}")
        return default
    value = params[name]
    if kind is not None and not isinstance(value, kind):
        raise ConfigError(f"{where}: parameter {name!r} must be {getattr(kind, '__name__', kind)}")
    return value


def _str_list(params: dict, name: str, where: str) -> list[str]:
    value = _param(params, name, (list, tuple), where=where)
    if not value or not all(isinstance(v, str) and v for v in value):
        raise ConfigError(f"{where}: {name!r} must be a non-empty list of non-empty strings")
    return list(value)


@predicate("field_nonempty")
def _field_nonempty(params, columns):
    fields = _str_list(params, "fields", "field_nonempty")
    return lambda item: all(get_field(item, f) not in (None, "") for f in fields)


@predicate("field_equals")
def _field_equals(params, columns):
    name = _param(params, "field", str, where="field_equals")
    value = _param(params, "value", where="field_equals")
    return lambda item: _plain(get_field(item, name)) == value


@predicate("field_in")
def _field_in(params, columns):
    name = _param(params, "field", str, where="field_in")
    values = set(_param(params, "values", (list, tuple), where="field_in"))
    return lambda item: _plain(get_field(item, name)) in values


@predicate("url_matches")
def _url_matches(params, columns):
    name = _param(params, "field", str, default="url", where="url_matches")
    pattern = _param(params, "pattern", str, where="url_matches")
    try:
        rx = re.compile(pattern)
    except re.error as exc:
        raise ConfigError(f"url_matches: bad pattern {pattern!r}: {exc}") from exc
    return lambda item: rx.search(get_field(item, name) or "") is not None


def _domain_matcher(site: str, subdomains: bool):
    site = site.lower().strip(".")
    suffix = "." + site

    def match(domain: str) -> bool:
        return domain == site or (subdomains and domain.endswith(suffix))

    return match


@predicate("domain_is")
def _domain_is(params, columns):
    """Domain of ``field`` (a URL, or a domain when ``is_domain``) equals or sits under ``site``."""
    name = _param(params, "field", str, default="domain", where="domain_is")
    site = _param(params, "site", str, where="domain_is")
    if not site.strip("."):
        raise ConfigError("domain_is: 'site' must be non-empty")
    match = _domain_matcher(site, bool(_param(params, "subdomains", bool, default=True, where="domain_is")))
    as_domain = bool(_param(params, "is_domain", bool, default=name.endswith("domain"), where="domain_is"))
    if as_domain:
        return lambda item: match(get_field(item, name) or "")
    return lambda item: match(extract_domain(get_field(item, name) or ""))


@predicate("url_is")
def _url_is(params, columns):
    name = _param(params, "field", str, default="dest", where="url_is")
    targets = {u for u in _str_list(params, "urls", "url_is")}
    return lambda item: get_field(item, name) in targets


def _date_bound(value: str, pad: str, where: str) -> str:
    text = value.replace("-", "")
    if not text.isdigit() or not 4 <= len(text) <= 14:
        raise ConfigError(f"{where}: dates look like yyyy[MM[dd[HHmmss]]], got {value!r}")
    return text + pad * (14 - len(text))


@predicate("date_range")
def _date_range(params, columns):
    start = _param(params, "start", str, default="0000", where="date_range")
    end = _param(params, "end", str, default="9999", where="date_range")
    lo = _date_bound(start, "0", "date_range")
    hi = _date_bound(end, "9", "date_range")

    def check(item) -> bool:
        ts = get_field(item, "crawl_ts") or get_field(item, "crawl_date") or ""
        ts = (ts + "0" * 14)[:14] if ts else ""
        return bool(ts) and lo <= ts <= hi

    return check


@predicate("mime_in")
def _mime_in(params, columns):
    types = [t.lower() for t in _str_list(params, "types", "mime_in")]
    exact = {t for t in types if not t.endswith("/")}
    prefixes = tuple(t for t in types if t.endswith("/"))

    def check(item) -> bool:
        media = str(get_field(item, "mime") or "")
        return media in exact or (bool(prefixes) and media.startswith(prefixes))

    return check


@predicate("kind_in")
def _kind_in(params, columns):
    kinds = set(_str_list(params, "kinds", "kind_in"))
    return lambda item: get_field(item, "kind") in kinds


@predicate("status_is")
def _status_is(params, columns):
    codes = set(_param(params, "codes", (list, tuple), default=[200], where="status_is"))
    allow_absent = bool(_param(params, "allow_absent", bool, default=True, where="status_is"))

    def check(item) -> bool:
        status = get_field(item, "status")
        return status in codes or (status is None and allow_absent)

    return check


@predicate("valid_page")
def _valid_page(params, columns):
    def check(item) -> bool:
        if isinstance(item, RawRecord):
            return item.http is not None and is_valid_page(item.record, item.http)
        return isinstance(item, PageRecord)

    return check


@predicate("contains_keywords")
def _contains_keywords(params, columns):
    keywords = _str_list(params, "keywords", "contains_keywords")
    mode = _param(params, "mode", str, default="any", where="contains_keywords")
    if mode not in ("any", "all"):
        raise ConfigError("contains_keywords: mode must be 'any' or 'all'")
    combine = any if mode == "any" else all

    def check(item) -> bool:
        counts = keyword_counts(get_field(item, "text") or "", keywords)
        return combine(n > 0 for n in counts.values())

    return check


@predicate("count_gt")
def _count_gt(params, columns):
    bound = _param(params, "min_exclusive", int, where="count_gt")
    name = _param(params, "field", str, default="count", where="count_gt")
    if bound < 0:
        raise ConfigError("count_gt: min_exclusive must be >= 0")
    return lambda item: (get_field(item, name) or 0) > bound


# Mapper factories return (fn, output columns); fn maps one item to a list.


@mapper("project")
def _project(params, columns):
    fields = _str_list(params, "fields", "project")
    return (lambda item: [{f: _plain(get_field(item, f)) for f in fields}]), tuple(fields)


@mapper("domains")
def _domains(params, columns):
    mapping = _param(params, "fields", dict, where="domains")
    if not mapping or not all(isinstance(k, str) and isinstance(v, str) for k, v in mapping.items()):
        raise ConfigError("domains: 'fields' must map URL field names to output names")
    keep = list(_param(params, "keep", (list, tuple), default=[], where="domains"))
    pairs = list(mapping.items())
    out_cols = tuple(v for _, v in pairs) + tuple(keep)

    def fn(item):
        row = {out: extract_domain(get_field(item, src) or "") for src, out in pairs}
        for name in keep:
            row[name] = _plain(get_field(item, name))
        return [row]

    return fn, out_cols


@mapper("plain_text")
def _plain_text(params, columns):
    cols = ("crawl_date", "domain", "url", "text")

    def fn(item):
        return [{"crawl_date": item.crawl_date, "domain": item.domain, "url": item.url, "text": item.text}]

    return fn, cols


@mapper("links")
def _links(params, columns):
    return (lambda item: item.links), LINK_COLUMNS


@mapper("keyword_counts")
def _keyword_counts(params, columns):
    keywords = _str_list(params, "keywords", "keyword_counts")
    keep = list(_param(params, "keep", (list, tuple), default=[], where="keyword_counts"))

    def fn(item):
        counts = keyword_counts(get_field(item, "text") or "", keywords)
        rows = []
        for keyword, n in counts.items():
            if n:
                row = {"keyword": keyword, "count": n}
                for name in keep:
                    row[name] = _plain(get_field(item, name))
                rows.append(row)
        return rows

    return fn, ("keyword", "count") + tuple(keep)


@mapper("checksum")
def _checksum(params, columns):
    cols = ("crawl_date", "url", "mime", "md5")

    def fn(item):
        return [{"crawl_date": item.crawl_date, "url": item.url, "mime": str(item.mime), "md5": item.md5}]

    return fn, cols


# -- plans ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Filter:
    predicate: str | Callable
    params: dict = field(default_factory=dict)


@dataclass(frozen=True)
class Extract:
    mapper: str | Callable
    params: dict = field(default_factory=dict)
    columns: tuple | None = None  # required for callables


@dataclass(frozen=True)
class Aggregate:
    key: tuple
    reducer: str = "count"
    value: str | None = None
    exemplar: str | None = None

    @property
    def value_name(self) -> str:
        return "count" if self.reducer == "count" else self.value

    @property
    def columns(self) -> tuple:
        cols = tuple(self.key) + (self.value_name,)
        if self.exemplar:
            cols += ("exemplar_" + self.exemplar,)
        return cols


@dataclass(frozen=True)
class Sink:
    path: str
    format: str = "csv"


@dataclass(frozen=True)
class Plan:
    view: str
    stages: tuple = ()
    sinks: tuple = ()
    limit: int | None = None

    def aggregate(self) -> Aggregate | None:
        for stage in self.stages:
            if isinstance(stage, Aggregate):
                return stage
        return None

    def to_dict(self) -> dict:
        stages = []
        for stage in self.stages:
            if isinstance(stage, Filter):
                if not isinstance(stage.predicate, str):
                    raise ConfigError("plans with in-process callables cannot be serialized")
                stages.append({"filter": stage.predicate, "params": dict(stage.params)})
            elif isinstance(stage, Extract):
                if not isinstance(stage.mapper, str):
                    raise ConfigError("plans with in-process callables cannot be serialized")
                stages.append({"extract": stage.mapper, "params": dict(stage.params)})
            else:
                agg = {"key": list(stage.key), "reducer": stage.reducer}
                if stage.value:
                    agg["value"] = stage.value
                if stage.exemplar:
                    agg["exemplar"] = stage.exemplar
                stages.append({"aggregate": agg})
        out = {"view": self.view, "stages": stages, "sinks": [{"path": s.path, "format": s.format} for s in self.sinks]}
        if self.limit is not None:
            out["limit"] = self.limit
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=False, indent=2)

    @classmethod
    def from_dict(cls, doc: dict) -> "Plan":
        if not isinstance(doc, dict) or "view" not in doc:
            raise ConfigError("a plan document needs at least a 'view'")
        stages = []
        for raw in doc.get("stages", []):
            if not isinstance(raw, dict):
                raise ConfigError(f"bad stage entry: {raw!r}")
            if "filter" in raw:
                stages.append(Filter(raw["filter"], dict(raw.get("params", {}))))
            elif "extract" in raw:
                stages.append(Extract(raw["extract"], dict(raw.get("params", {}))))
            elif "aggregate" in raw:
                agg = raw["aggregate"]
                stages.append(Aggregate(tuple(agg.get("key", ())), agg.get("reducer", "count"),
                                        agg.get("value"), agg.get("exemplar")))
            else:
                raise ConfigError(f"stage needs one of filter/extract/aggregate: {raw!r}")
        sinks = doc.get("sinks", doc.get("sink", []))
        if isinstance(sinks, dict):
            sinks = [sinks]
        plan = cls(
            doc["view"],
            tuple(stages),
            tuple(Sink(s["path"], s.get("format", "csv")) for s in sinks),
            doc.get("limit"),
        )
        compile_plan(plan)
        return plan

    @classmethod
    def from_json(cls, text: str) -> "Plan":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"plan is not valid JSON: {exc}") from exc
        return cls.from_dict(doc)


@dataclass
class CompiledPlan:
    plan: Plan
    pre: list  # [(is_filter, fn)]
    post: list
    aggregate: Aggregate | None
    columns: tuple  # output columns


def _compile_stage(stage, columns):
    if isinstance(stage, Filter):
        if callable(stage.predicate):
            return (True, stage.predicate), columns
        factory = PREDICATES.get(stage.predicate)
        if factory is None:
            raise ConfigError(f"unknown predicate {stage.predicate!r}; known: {sorted(PREDICATES)}")
        return (True, factory(stage.params, columns)), columns
    if callable(stage.mapper):
        if not stage.columns:
            raise ConfigError("an Extract with a callable mapper must declare its columns")
        return (False, stage.mapper), tuple(stage.columns)
    factory = MAPPERS.get(stage.mapper)
    if factory is None:
        raise ConfigError(f"unknown mapper {stage.mapper!r}; known: {sorted(MAPPERS)}")
    fn, cols = factory(stage.params, columns)
    return (False, fn), tuple(cols)


def compile_plan(plan: Plan) -> CompiledPlan:
    """Validate a plan and resolve its stage ids. Raises ConfigError."""
    if plan.view not in VIEWS:
        raise ConfigError(f"unknown view {plan.view!r}; expected one of {VIEWS}")
    aggregates = [s for s in plan.stages if isinstance(s, Aggregate)]
    if len(aggregates) > 1:
        raise ConfigError("a plan may contain at most one Aggregate stage")
    if plan.limit is not None and (not isinstance(plan.limit, int) or plan.limit < 0):
        raise ConfigError("limit must be a non-negative integer")
    for sink in plan.sinks:
        if sink.format not in formats.FORMATS:
            raise ConfigError(f"unknown sink format {sink.format!r}")
    columns = VIEW_COLUMNS[plan.view]
    pre, post = [], []
    agg = None
    for stage in plan.stages:
        if isinstance(stage, Aggregate):
            if stage.reducer not in REDUCERS:
                raise ConfigError(f"unknown reducer {stage.reducer!r}; expected one of {REDUCERS}")
            if not stage.key:
                raise ConfigError("an Aggregate needs at least one key field")
            if stage.reducer != "count" and not stage.value:
                raise ConfigError(f"reducer {stage.reducer!r} needs a value field")
            agg = stage
            columns = stage.columns
            continue
        if not isinstance(stage, (Filter, Extract)):
            raise ConfigError(f"not a stage: {stage!r}")
        compiled, columns = _compile_stage(stage, columns)
        (post if agg is not None else pre).append(compiled)
    return CompiledPlan(plan, pre, post, agg, columns)


def _apply(stages: list, items: list) -> list:
    for is_filter, fn in stages:
        if is_filter:
            items = [x for x in items if fn(x)]
        else:
            items = [y for x in items for y in fn(x)]
        if not items:
            break
    return items


# -- keyed counts ----------------------------------------------------------------------


def _sort_key(key: tuple) -> tuple:
    return tuple("" if k is None else str(k) for k in key)


@dataclass
class KeyedCounts:
    """Grouped values in canonical order: value descending, then key ascending."""

    rows: list  # [(key tuple, value)]
    key_names: tuple = ("key",)
    value_name: str = "count"
    exemplars: dict | None = None
    exemplar_name: str | None = None

    @classmethod
    def from_mapping(cls, mapping: dict, key_names=("key",), value_name="count",
                     exemplars: dict | None = None, exemplar_name: str | None = None) -> "KeyedCounts":
        rows = sorted(mapping.items(), key=lambda kv: (-kv[1], _sort_key(kv[0])))
        return cls(rows, tuple(key_names), value_name, exemplars, exemplar_name)

    def __len__(self) -> int:
        return len(self.rows)

    def __iter__(self):
        return iter(self.rows)

    def total(self) -> int:
        return sum(v for _, v in self.rows)

    @property
    def columns(self) -> tuple:
        cols = self.key_names + (self.value_name,)
        if self.exemplar_name:
            cols += ("exemplar_" + self.exemplar_name,)
        return cols

    def values(self) -> list[tuple]:
        out = []
        for key, value in self.rows:
            row = tuple(key) + (value,)
            if self.exemplar_name:
                row += ((self.exemplars or {}).get(key),)
            out.append(row)
        return out

    def as_dicts(self) -> list[dict]:
        cols = self.columns
        return [dict(zip(cols, row)) for row in self.values()]

    def head(self, n: int) -> "KeyedCounts":
        return KeyedCounts(self.rows[:n], self.key_names, self.value_name, self.exemplars, self.exemplar_name)


def _as_key(value) -> tuple:
    return value if isinstance(value, tuple) else (value,)


def count_items(stream: Iterable, key_fn: Callable | None = None, key_names=("key",)) -> KeyedCounts:
    """Exact group-by-and-count with canonical ordering."""
    counts: dict = {}
    for item in stream:
        key = _as_key(key_fn(item) if key_fn is not None else item)
        counts[key] = counts.get(key, 0) + 1
    return KeyedCounts.from_mapping(counts, key_names)


def threshold(counts: KeyedCounts, min_exclusive: int) -> KeyedCounts:
    """Keep rows whose value is strictly greater than ``min_exclusive``."""
    if min_exclusive < 0:
        raise ConfigError("min_exclusive must be >= 0")
    rows = [(k, v) for k, v in counts.rows if v > min_exclusive]
    return KeyedCounts(rows, counts.key_names, counts.value_name, counts.exemplars, counts.exemplar_name)


class _Accumulator:
    def __init__(self, agg: Aggregate, max_groups: int):
        self.agg = agg
        self.max_groups = max_groups
        self.values: dict = {}
        self.exemplars: dict = {}

    def add(self, item) -> None:
        agg = self.agg
        key = tuple(_plain(get_field(item, k)) for k in agg.key)
        values = self.values
        if agg.reducer == "count":
            value = 1
        else:
            value = get_field(item, agg.value)
            if value is None:
                return
        if key in values:
            current = values[key]
            if agg.reducer in ("count", "sum"):
                values[key] = current + value
            elif agg.reducer == "max":
                values[key] = max(current, value)
            else:
                values[key] = min(current, value)
        else:
            if len(values) >= self.max_groups:
                raise AggregateOverflow(
                    f"aggregate exceeded {self.max_groups} groups; raise max_groups or add a filter"
                )
            values[key] = value
        if agg.exemplar:
            ex = _plain(get_field(item, agg.exemplar))
            if ex is not None:
                old = self.exemplars.get(key)
                if old is None or str(ex) < str(old):
                    self.exemplars[key] = ex

    def merge(self, values: dict, exemplars: dict) -> None:
        reducer = self.agg.reducer
        for key, value in values.items():
            if key in self.values:
                current = self.values[key]
                if reducer in ("count", "sum"):
                    self.values[key] = current + value
                elif reducer == "max":
                    self.values[key] = max(current, value)
                else:
                    self.values[key] = min(current, value)
            else:
                if len(self.values) >= self.max_groups:
                    raise AggregateOverflow(
                        f"aggregate exceeded {self.max_groups} groups; raise max_groups or add a filter"
                    )
                self.values[key] = value
        for key, ex in exemplars.items():
            old = self.exemplars.get(key)
            if old is None or str(ex) < str(old):
                self.exemplars[key] = ex

    def result(self) -> KeyedCounts:
        agg = self.agg
        return KeyedCounts.from_mapping(
            self.values, tuple(agg.key), agg.value_name,
            self.exemplars if agg.exemplar else None, agg.exemplar,
        )


# -- execution --------------------------------------------------------------------------


@dataclass
class RunOptions:
    workers: int = 1
    format_hint: str = "auto"
    max_record_bytes: int = DEFAULT_MAX_RECORD_BYTES
    max_groups: int = DEFAULT_MAX_GROUPS


@dataclass
class RunResult:
    plan: Plan
    columns: tuple
    rows: list | None  # list of value tuples; None when streamed to sinks
    counts: KeyedCounts | None
    row_count: int
    stats: SourceStats

    def as_dicts(self) -> list[dict]:
        return [dict(zip(self.columns, r)) for r in (self.rows or [])]


@dataclass
class _FileResult:
    index: int
    stats: SourceStats
    partials: list  # per plan: (values, exemplars) | rows list | part row count


def _part_path(part_dir: str, plan_index: int, sink_index: int, file_index: int) -> str:
    return os.path.join(part_dir, f"plan{plan_index:02d}-sink{sink_index:02d}-{file_index:08d}")


def _scan_file(task) -> _FileResult:
    index, path, plans, options, part_dir = task
    compiled = [compile_plan(p) for p in plans]
    stats = SourceStats()
    need_pages = any(c.plan.view != "raw" for c in compiled)
    need_raw = any(c.plan.view == "raw" for c in compiled)
    accs = [_Accumulator(c.aggregate, options.max_groups) if c.aggregate else None for c in compiled]
    row_lists: list = [None] * len(compiled)
    handles: list = [None] * len(compiled)
    row_counts = [0] * len(compiled)
    try:
        for j, c in enumerate(compiled):
            if c.aggregate is None:
                if c.plan.sinks:
                    handles[j] = [
                        open(_part_path(part_dir, j, k, index), "w", encoding="utf-8", newline="")
                        for k in range(len(c.plan.sinks))
                    ]
                else:
                    row_lists[j] = []
        for record in iter_file(path, stats, options.format_hint, options.max_record_bytes):
            page = page_from_record(record) if need_pages else None
            raw = RawRecord(record) if need_raw else None
            for j, c in enumerate(compiled):
                view = c.plan.view
                if view == "raw":
                    items = [raw]
                elif page is None:
                    continue
                elif view == "pages":
                    items = [page]
                else:
                    items = page.links
                    if not items:
                        continue
                items = _apply(c.pre, items)
                if not items:
                    continue
                acc = accs[j]
                if acc is not None:
                    for item in items:
                        acc.add(item)
                    continue
                cols = c.columns
                for item in items:
                    values = tuple(_plain(get_field(item, col)) for col in cols)
                    row_counts[j] += 1
                    if handles[j] is not None:
                        for sink, fh in zip(c.plan.sinks, handles[j]):
                            fh.write(formats.encode_row(sink.format, cols, values))
                    else:
                        row_lists[j].append(values)
    finally:
        for hs in handles:
            for fh in hs or ():
                fh.close()
    partials = []
    for j, c in enumerate(compiled):
        if accs[j] is not None:
            partials.append((accs[j].values, accs[j].exemplars))
        elif handles[j] is not None:
            partials.append(row_counts[j])
        else:
            partials.append(row_lists[j])
    return _FileResult(index, stats, partials)


def _concat_parts(sink: Sink, columns: tuple, parts: list[str], limit: int | None) -> int:
    written = 0
    with formats.atomic_output(sink.path) as out:
        out.write(formats.header(sink.format, columns))
        for part in parts:
            with open(part, encoding="utf-8", newline="") as fh:
                if limit is None:
                    shutil.copyfileobj(fh, out, 1 << 20)
                    continue
                for line in fh:
                    if written >= limit:
                        break
                    out.write(line)
                    written += 1
    return written


def _resolve_paths(source) -> list[str]:
    if isinstance(source, ArchiveSource):
        return list(source.paths)
    if isinstance(source, (str, os.PathLike)):
        source = [source]
    source = list(source)
    # An empty collection (e.g. an empty directory) is a valid, empty input.
    return open_source(source).paths if source else []


def run_plans(plans: Sequence[Plan], source, options: RunOptions | None = None, **kw) -> list[RunResult]:
    """Evaluate several plans in one scan of ``source``.

    ``source`` is an ArchiveSource or a list of archive file paths. Plans and
    paths are validated before any file is opened.
    """
    options = options or RunOptions(**kw)
    if options.workers < 1:
        raise ConfigError("workers must be >= 1")
    compiled = [compile_plan(p) for p in plans]
    paths = _resolve_paths(source)
    stats = SourceStats()
    part_dir = tempfile.mkdtemp(prefix="warc-distill-parts-")
    accs = [_Accumulator(c.aggregate, options.max_groups) if c.aggregate else None for c in compiled]
    rows: list = [[] for _ in compiled]
    counts = [0] * len(compiled)
    tasks = [(i, path, list(plans), options, part_dir) for i, path in enumerate(paths)]
    try:
        n_procs = min(options.workers, len(tasks))
        if n_procs <= 1:
            results = map(_scan_file, tasks)
            pool = None
        else:
            pool = multiprocessing.get_context().Pool(n_procs)
            results = pool.imap(_scan_file, tasks, chunksize=1)
        try:
            for res in results:
                stats.merge(res.stats)
                for j, partial in enumerate(res.partials):
                    if accs[j] is not None:
                        accs[j].merge(*partial)
                    elif isinstance(partial, int):
                        counts[j] += partial
                    else:
                        rows[j].extend(partial)
                        counts[j] += len(partial)
        finally:
            if pool is not None:
                pool.close()
                pool.join()
        if isinstance(source, ArchiveSource):
            source.stats.merge(stats)
        out = []
        for j, c in enumerate(compiled):
            plan = c.plan
            if accs[j] is not None:
                kc = accs[j].result()
                if c.post:
                    dict_rows = _apply(c.post, kc.as_dicts())
                    values = [tuple(_plain(get_field(r, col)) for col in c.columns) for r in dict_rows]
                    kc = None
                else:
                    values = kc.values()
                if plan.limit is not None:
                    values = values[: plan.limit]
                    if kc is not None:
                        kc = kc.head(plan.limit)
                for sink in plan.sinks:
                    formats.write_rows(sink.path, sink.format, c.columns, values)
                out.append(RunResult(plan, c.columns, values, kc, len(values), stats))
            elif plan.sinks:
                n = counts[j]
                for k, sink in enumerate(plan.sinks):
                    parts = [_part_path(part_dir, j, k, i) for i in range(len(paths))]
                    n = _concat_parts(sink, c.columns, parts, plan.limit)
                    if plan.limit is None:
                        n = counts[j]
                out.append(RunResult(plan, c.columns, None, None, n, stats))
            else:
                values = rows[j] if plan.limit is None else rows[j][: plan.limit]
                out.append(RunResult(plan, c.columns, values, None, len(values), stats))
        return out
    except OSError as exc:
        raise ProcessingError(str(exc)) from exc
    finally:
        shutil.rmtree(part_dir, ignore_errors=True)


def run(plan: Plan, source, workers: int = 1, **kw) -> RunResult:
    """Evaluate one plan; see ``run_plans``."""
    return run_plans([plan], source, RunOptions(workers=workers, **kw))[0]
