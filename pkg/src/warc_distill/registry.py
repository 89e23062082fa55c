"""Collection registry and the resumable derivative job chain.

Layout under the registry home (``$WARC_DISTILL_HOME``, default
``~/.warc_distill``)::

    registry.json                      every registered manifest
    registry.lock
    collections/<id>/jobs.jsonl        append-only job history
    collections/<id>/chain.lock
    collections/<id>/warcs/            fetched files (unless storage_dir is set)
    collections/<id>/derivatives/      the five output files

A chain runs the stages fetch, domains, webgraph, text, graphml, done in
order. Each transition is appended to the job log before and after the
stage runs, so a re-run picks up at the first stage without a ``finished``
entry.
"""

from __future__ import annotations

import datetime as _dt
import hashlib
import json
import logging
import os
import re
import shutil
import urllib.error
import urllib.parse
import urllib.request
from dataclasses import asdict, dataclass, field
from typing import Callable

from filelock import FileLock, Timeout

from . import formats
from .archive_io import collect_paths
from .derivatives import (
    DEFAULT_MIN_EXCLUSIVE,
    DeriveConfig,
    derive_all,
    load_edges_csv,
    output_paths,
    write_graphml_from_edges,
)
from .errors import ConfigError, ProcessingError

log = logging.getLogger(__name__)

STAGES = ("fetch", "domains", "webgraph", "text", "graphml", "done")
STATUSES = ("queued", "running", "finished", "failed")
_ID = re.compile(r"^[a-z0-9-]+$")
HOME_ENV = "WARC_DISTILL_HOME"


def default_home() -> str:
    return os.environ.get(HOME_ENV) or os.path.join(os.path.expanduser("~"), ".warc_distill")


@dataclass
class FileEntry:
    url: str
    size: int | None = None
    md5: str | None = None

    def to_dict(self) -> dict:
        out = {"url": self.url}
        if self.size is not None:
            out["size"] = self.size
        if self.md5 is not None:
            out["md5"] = self.md5
        return out


@dataclass
class CollectionManifest:
    id: str
    title: str
    files: list
    storage_dir: str | None = None

    @classmethod
    def from_dict(cls, doc, base_dir: str | None = None) -> "CollectionManifest":
        problems = []
        if not isinstance(doc, dict):
            raise ConfigError("manifest must be a JSON object")
        cid = doc.get("id")
        if not isinstance(cid, str) or not _ID.match(cid):
            problems.append("id: required, lowercase letters, digits and '-' only")
        title = doc.get("title", "")
        if not isinstance(title, str):
            problems.append("title: must be a string")
        raw_files = doc.get("files")
        files = []
        if not isinstance(raw_files, list) or not raw_files:
            problems.append("files: required, non-empty list")
        else:
            for i, entry in enumerate(raw_files):
                if isinstance(entry, str):
                    entry = {"url": entry}
                if not isinstance(entry, dict) or not isinstance(entry.get("url"), str) or not entry["url"]:
                    problems.append(f"files[{i}].url: required string")
                    continue
                size, md5 = entry.get("size"), entry.get("md5")
                if size is not None and (not isinstance(size, int) or size < 0):
                    problems.append(f"files[{i}].size: non-negative integer")
                if md5 is not None and (not isinstance(md5, str) or not re.fullmatch(r"[0-9a-fA-F]{32}", md5)):
                    problems.append(f"files[{i}].md5: 32 hex digits")
                url = entry["url"]
                if base_dir and "://" not in url and not os.path.isabs(url):
                    url = os.path.normpath(os.path.join(base_dir, url))
                files.append(FileEntry(url, size, md5.lower() if isinstance(md5, str) else None))
            names = [_target_name(f.url) for f in files]
            dupes = sorted({n for n in names if names.count(n) > 1})
            if dupes:
                problems.append(f"files: duplicate file names {dupes}")
        storage = doc.get("storage_dir")
        if storage is not None and not isinstance(storage, str):
            problems.append("storage_dir: must be a string")
        if problems:
            raise ConfigError("invalid manifest: " + "; ".join(problems))
        if storage and base_dir and not os.path.isabs(storage):
            storage = os.path.normpath(os.path.join(base_dir, storage))
        return cls(cid, title, files, storage)

    @classmethod
    def load(cls, path: str) -> "CollectionManifest":
        try:
            with open(path, encoding="utf-8") as fh:
                doc = json.load(fh)
        except FileNotFoundError as exc:
            raise ConfigError(f"manifest not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"manifest {path} is not valid JSON: {exc}") from exc
        return cls.from_dict(doc, os.path.dirname(os.path.abspath(path)))

    def to_dict(self) -> dict:
        out = {"id": self.id, "title": self.title, "files": [f.to_dict() for f in self.files]}
        if self.storage_dir:
            out["storage_dir"] = self.storage_dir
        return out


@dataclass
class JobRecord:
    collection_id: str
    stage: str
    status: str
    started_at: str | None = None
    ended_at: str | None = None
    stats: dict = field(default_factory=dict)
    error: str | None = None

    def to_dict(self) -> dict:
        return asdict(self)


def _target_name(url: str) -> str:
    path = urllib.parse.urlsplit(url).path if "://" in url else url
    return os.path.basename(path.rstrip("/")) or "file"


def _md5_file(path: str) -> str:
    h = hashlib.md5(usedforsecurity=False)
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _verify(path: str, entry: FileEntry) -> str | None:
    """Return a mismatch description, or None when the file checks out."""
    if entry.size is not None:
        actual = os.path.getsize(path)
        if actual != entry.size:
            return f"size {actual} != expected {entry.size}"
    if entry.md5 is not None:
        digest = _md5_file(path)
        if digest != entry.md5:
            return f"md5 {digest} != expected {entry.md5}"
    return None


def _transfer(url: str, dest: str) -> None:
    if "://" not in url or url.startswith("file://"):
        src = urllib.parse.urlsplit(url).path if url.startswith("file://") else url
        shutil.copyfile(src, dest)
        return
    with urllib.request.urlopen(url, timeout=60) as resp, open(dest, "wb") as out:
        shutil.copyfileobj(resp, out, 1 << 20)


class _Clock:
    """UTC ISO timestamps, strictly increasing within one process."""

    def __init__(self):
        self.last: _dt.datetime | None = None

    def now(self, floor: str | None = None) -> str:
        moment = _dt.datetime.now(_dt.timezone.utc)
        if floor:
            prev = _dt.datetime.fromisoformat(floor)
            if self.last is None or prev > self.last:
                self.last = prev
        if self.last is not None and moment <= self.last:
            moment = self.last + _dt.timedelta(microseconds=1)
        self.last = moment
        return moment.isoformat(timespec="microseconds")


class Registry:
    def __init__(self, home: str | None = None):
        self.home = os.path.abspath(home or default_home())
        self.path = os.path.join(self.home, "registry.json")
        self._lock = FileLock(os.path.join(self.home, "registry.lock"))
        self._clock = _Clock()
        os.makedirs(self.home, exist_ok=True)

    # -- registry file --------------------------------------------------------

    def _load(self) -> dict:
        if not os.path.exists(self.path):
            return {"version": 1, "collections": {}}
        with open(self.path, encoding="utf-8") as fh:
            return json.load(fh)

    def _save(self, doc: dict) -> None:
        with formats.atomic_output(self.path) as fh:
            json.dump(doc, fh, indent=2, sort_keys=True)
            fh.write("\n")

    def collection_dir(self, cid: str) -> str:
        return os.path.join(self.home, "collections", cid)

    def storage_dir(self, manifest: CollectionManifest) -> str:
        return manifest.storage_dir or os.path.join(self.collection_dir(manifest.id), "warcs")

    def output_dir(self, cid: str) -> str:
        return os.path.join(self.collection_dir(cid), "derivatives")

    def ids(self) -> list[str]:
        return sorted(self._load()["collections"])

    def get(self, cid: str) -> CollectionManifest:
        doc = self._load()["collections"].get(cid)
        if doc is None:
            raise ConfigError(f"no collection registered with id {cid!r}")
        return CollectionManifest.from_dict(doc)

    def register(self, manifest: CollectionManifest) -> JobRecord:
        with self._lock:
            doc = self._load()
            if manifest.id in doc["collections"]:
                raise ConfigError(f"collection id {manifest.id!r} is already registered")
            doc["collections"][manifest.id] = manifest.to_dict()
            os.makedirs(self.collection_dir(manifest.id), exist_ok=True)
            self._save(doc)
            job = JobRecord(manifest.id, "fetch", "queued", started_at=None)
            self._append(job)
        return job

    # -- job log ----------------------------------------------------------------

    def _log_path(self, cid: str) -> str:
        return os.path.join(self.collection_dir(cid), "jobs.jsonl")

    def _append(self, job: JobRecord) -> None:
        path = self._log_path(job.collection_id)
        os.makedirs(os.path.dirname(path), exist_ok=True)
        with open(path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(job.to_dict(), sort_keys=True) + "\n")
            fh.flush()
            os.fsync(fh.fileno())

    def history(self, cid: str) -> list[JobRecord]:
        path = self._log_path(cid)
        if not os.path.exists(path):
            return []
        jobs = []
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                try:
                    jobs.append(JobRecord(**json.loads(line)))
                except (json.JSONDecodeError, TypeError):
                    # A torn final line from a crash mid-append.
                    log.warning("ignoring unreadable job log line in %s", path)
        return jobs

    def state(self, cid: str) -> dict:
        """Latest JobRecord per stage; stages never touched read as queued."""
        latest = {stage: JobRecord(cid, stage, "queued") for stage in STAGES}
        for job in self.history(cid):
            latest[job.stage] = job
        return latest

    def _last_time(self, cid: str) -> str | None:
        last = None
        for job in self.history(cid):
            for t in (job.started_at, job.ended_at):
                if t and (last is None or t > last):
                    last = t
        return last

    # -- stages -------------------------------------------------------------------

    def fetch(self, cid: str) -> dict:
        """Copy or download every manifest file into storage, verifying as it goes.

        Files already present and verified are left alone. Raises
        ProcessingError listing every file that failed.
        """
        manifest = self.get(cid)
        storage = self.storage_dir(manifest)
        os.makedirs(storage, exist_ok=True)
        stats = {"files": len(manifest.files), "transferred": 0, "already_present": 0, "bytes": 0}
        errors = []
        for entry in manifest.files:
            dest = os.path.join(storage, _target_name(entry.url))
            if os.path.exists(dest) and _verify(dest, entry) is None:
                stats["already_present"] += 1
                stats["bytes"] += os.path.getsize(dest)
                continue
            part = dest + ".part"
            try:
                _transfer(entry.url, part)
                problem = _verify(part, entry)
                if problem:
                    raise ProcessingError(problem)
                os.replace(part, dest)
                stats["transferred"] += 1
                stats["bytes"] += os.path.getsize(dest)
            except (OSError, urllib.error.URLError, ProcessingError) as exc:
                if os.path.exists(part):
                    os.unlink(part)
                errors.append(f"{entry.url}: {exc}")
        if errors:
            raise ProcessingError("fetch failed for " + "; ".join(errors))
        return stats

    def local_files(self, cid: str) -> list[str]:
        manifest = self.get(cid)
        storage = self.storage_dir(manifest)
        return [os.path.join(storage, _target_name(f.url)) for f in manifest.files]

    def _run_stage(self, cid: str, stage: str, workers: int, min_exclusive: int) -> dict:
        if stage == "fetch":
            return self.fetch(cid)
        out_dir = self.output_dir(cid)
        paths = output_paths(out_dir, cid)
        if stage in ("domains", "webgraph", "text"):
            files = collect_paths(self.local_files(cid))
            report = derive_all(files, DeriveConfig(cid, out_dir, (stage,), min_exclusive, workers))
            stats = {
                "records_read": report.stats.records_read,
                "records_skipped": report.stats.records_skipped,
                "files_skipped": report.stats.files_skipped,
                "bytes_read": report.stats.bytes_read,
                "rows": report.rows[stage],
            }
            if stage == "domains":
                stats["pages"] = report.totals["pages"]
            if stage == "webgraph":
                stats["edge_weight"] = report.totals["edge_weight"]
            return stats
        if stage == "graphml":
            edges = load_edges_csv(paths["webgraph"], min_exclusive)
            return write_graphml_from_edges(edges, paths["graphml"])
        # done: cross-check the finished products
        state = self.state(cid)
        pages = state["domains"].stats.get("pages")
        text_rows = state["text"].stats.get("rows")
        if pages is not None and text_rows is not None and pages != text_rows:
            raise ProcessingError(f"text rows ({text_rows}) != distribution total ({pages})")
        missing = [p for p in paths.values() if not os.path.exists(p)]
        if missing:
            raise ProcessingError(f"missing outputs: {missing}")
        return {"outputs": sorted(os.path.basename(p) for p in paths.values())}

    def run_chain(
        self,
        cid: str,
        force: bool = False,
        workers: int = 1,
        min_exclusive: int = DEFAULT_MIN_EXCLUSIVE,
        webhook: str | None = None,
        stage_runner: Callable | None = None,
        stages: tuple = STAGES,
    ) -> list[JobRecord]:
        """Run every unfinished stage in order; returns the records appended.

        An empty list means everything was already finished. On a stage
        failure the failure is recorded, later stages stay queued and
        ProcessingError is raised. ``stages`` restricts the run to a prefix
        of the chain (the ``collection fetch`` command runs only fetch).
        """
        self.get(cid)
        unknown = [s for s in stages if s not in STAGES]
        if unknown:
            raise ConfigError(f"unknown stage(s) {unknown}; stages are {STAGES}")
        lock = FileLock(os.path.join(self.collection_dir(cid), "chain.lock"))
        try:
            lock.acquire(timeout=0)
        except Timeout as exc:
            raise ProcessingError(f"a chain for {cid!r} is already running") from exc
        runner = stage_runner or self._run_stage
        appended: list[JobRecord] = []
        try:
            self._clock.now(self._last_time(cid))
            state = self.state(cid)
            for stage in STAGES:
                if stage not in stages:
                    continue
                if not force and state[stage].status == "finished":
                    continue
                started = self._clock.now()
                job = JobRecord(cid, stage, "running", started_at=started)
                self._append(job)
                appended.append(job)
                try:
                    stats = runner(cid, stage, workers, min_exclusive)
                except Exception as exc:
                    failed = JobRecord(cid, stage, "failed", started, self._clock.now(), error=str(exc))
                    self._append(failed)
                    appended.append(failed)
                    raise ProcessingError(f"stage {stage} failed: {exc}") from exc
                done = JobRecord(cid, stage, "finished", started, self._clock.now(), stats=stats or {})
                self._append(done)
                appended.append(done)
                state[stage] = done
        finally:
            lock.release()
        if appended and webhook:
            notify(webhook, appended[-1])
        return appended


def notify(url: str, job: JobRecord) -> bool:
    """POST the final JobRecord as JSON. Failures are logged, never raised."""
    body = json.dumps(job.to_dict(), sort_keys=True).encode("utf-8")
    req = urllib.request.Request(url, data=body, headers={"Content-Type": "application/json"}, method="POST")
    try:
        with urllib.request.urlopen(req, timeout=30) as resp:
            resp.read()
        return True
    except (OSError, urllib.error.URLError) as exc:
        log.warning("webhook %s failed: %s", url, exc)
        return False
