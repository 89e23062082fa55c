"""Streaming reader for WARC and ARC container files.

Files may be plain or gzip-compressed, including the usual one-member-per-record
layout. Reading is strictly sequential and memory stays proportional to the
largest single record. Damage is never fatal: malformed records, truncated
tails and corrupt gzip members are skipped, counted in ``SourceStats`` and the
scan resumes at the next recognizable record boundary.
"""

from __future__ import annotations

import datetime as _dt
import logging
import os
import re
import zlib
from dataclasses import dataclass, field
from typing import Iterable, Iterator

from .errors import ConfigError

log = logging.getLogger(__name__)

GZIP_MAGIC = b"\x1f\x8b"
CHUNK_SIZE = 1 << 20
DEFAULT_MAX_RECORD_BYTES = 1 << 30
MAX_LINE_BYTES = 1 << 16
MAX_HEADER_BYTES = 1 << 20

WARC_KINDS = frozenset(
    {"response", "request", "metadata", "revisit", "resource", "conversion", "warcinfo"}
)
ARC_KIND = "arc-entry"
FORMAT_HINTS = ("auto", "warc", "arc")
ARCHIVE_SUFFIXES = (".warc", ".warc.gz", ".arc", ".arc.gz")

_WARC_VERSION_LINE = re.compile(rb"^WARC/(\d+\.\d+)\r?\n$")
_STATUS_LINE = re.compile(rb"^HTTP/\d(?:\.\d)?\s+(\d{3})(?:\s|$)")
_MEDIA_TYPE = re.compile(r"^[a-z0-9!#$&^_.+-]+/[a-z0-9!#$&^_.+-]+$")
_SCHEME_PREFIX = re.compile(rb"^[A-Za-z][A-Za-z0-9+.-]*:")
_ISO_DATE = re.compile(
    r"^(\d{4})(?:-(\d{2})(?:-(\d{2})(?:[Tt ](\d{2}):(\d{2})(?::(\d{2})(?:[.,]\d+)?)?)?)?)?"
    r"\s*(Z|z|[+-]\d{2}:?\d{2})?$"
)

# Markers interleaved with decoded bytes by the gzip layer.
_MEMBER_END = object()
_BREAK = object()


@dataclass
class SourceStats:
    records_read: int = 0
    records_skipped: int = 0
    bytes_read: int = 0
    files_read: int = 0
    files_skipped: int = 0
    kinds: dict = field(default_factory=dict)

    @property
    def skipped(self) -> int:
        return self.records_skipped + self.files_skipped

    def count_kind(self, kind: str) -> None:
        self.kinds[kind] = self.kinds.get(kind, 0) + 1

    def merge(self, other: "SourceStats") -> None:
        self.records_read += other.records_read
        self.records_skipped += other.records_skipped
        self.bytes_read += other.bytes_read
        self.files_read += other.files_read
        self.files_skipped += other.files_skipped
        for kind, n in other.kinds.items():
            self.kinds[kind] = self.kinds.get(kind, 0) + n

    def as_dict(self) -> dict:
        return {
            "records_read": self.records_read,
            "records_skipped": self.records_skipped,
            "bytes_read": self.bytes_read,
            "files_read": self.files_read,
            "files_skipped": self.files_skipped,
            "kinds": dict(sorted(self.kinds.items())),
        }


@dataclass(frozen=True)
class ArchiveRecord:
    """One record from a WARC or ARC file.

    ``payload`` is the full record block; for responses that is the raw HTTP
    message, status line included. ``timestamp`` is always 14 digits, UTC.
    """

    kind: str
    target_uri: str | None
    timestamp: str
    declared_mime: str | None
    content_length: int
    payload: bytes
    source_format: str
    headers: tuple = ()
    version: str = ""
    path: str = ""
    offset: int = 0

    def header(self, name: str) -> str | None:
        name = name.lower()
        for key, value in self.headers:
            if key.lower() == name:
                return value
        return None


@dataclass(frozen=True)
class HttpPayload:
    status: int | None
    headers: tuple
    body: bytes
    content_type: str | None
    charset: str | None = None

    def header(self, name: str) -> str | None:
        name = name.lower()
        for key, value in self.headers:
            if key.lower() == name:
                return value
        return None


def parse_media_type(value: str | None) -> tuple[str | None, str | None]:
    """Split a Content-Type value into (lowercase type/subtype, charset)."""
    if not value:
        return None, None
    parts = value.split(";")
    media = parts[0].strip().lower()
    charset = None
    for param in parts[1:]:
        name, _, val = param.partition("=")
        if name.strip().lower() == "charset":
            charset = val.strip().strip("\"'").lower() or None
    if not _MEDIA_TYPE.match(media):
        media = None
    return media, charset


def warc_date_to_timestamp(value: str) -> str | None:
    """Normalize an ISO 8601 WARC-Date to ``yyyyMMddHHmmss`` in UTC."""
    m = _ISO_DATE.match(value.strip())
    if not m:
        return None
    year, month, day, hour, minute, second, tz = m.groups()
    try:
        moment = _dt.datetime(
            int(year),
            int(month or 1),
            int(day or 1),
            int(hour or 0),
            int(minute or 0),
            int(second or 0),
            tzinfo=_dt.timezone.utc,
        )
    except ValueError:
        return None
    if tz and tz not in ("Z", "z"):
        sign = -1 if tz[0] == "-" else 1
        digits = tz[1:].replace(":", "")
        offset = _dt.timedelta(hours=int(digits[:2]), minutes=int(digits[2:]))
        moment = moment - sign * offset
    if not 1 <= moment.year <= 9999:
        return None
    return moment.strftime("%Y%m%d%H%M%S")


def arc_date_to_timestamp(value: str) -> str | None:
    if not value.isdigit() or not 12 <= len(value) <= 17:
        return None
    value = (value + "00")[:14]
    try:
        _dt.datetime.strptime(value, "%Y%m%d%H%M%S")
    except ValueError:
        return None
    return value


# -- byte layer ---------------------------------------------------------------


def _plain_chunks(fh, stats: SourceStats) -> Iterator[bytes]:
    while True:
        chunk = fh.read(CHUNK_SIZE)
        if not chunk:
            return
        stats.bytes_read += len(chunk)
        yield chunk


def _gzip_chunks(fh, stats: SourceStats) -> Iterator[object]:
    """Decode concatenated gzip members.

    Yields decoded bytes, ``_MEMBER_END`` after each intact member and
    ``_BREAK`` where a member turned out to be corrupt or truncated, or where
    non-gzip garbage sits between members. After a corrupt member, decoding
    resumes at the next gzip magic found past the member's first byte.
    """
    magic = GZIP_MAGIC + b"\x08"
    high_water = 0

    def read_more() -> bytes:
        nonlocal high_water
        chunk = fh.read(CHUNK_SIZE)
        end = fh.tell()
        if end > high_water:
            stats.bytes_read += end - high_water
            high_water = end
        return chunk

    buf = b""
    pos = 0  # raw offset of buf[0]
    while True:
        # At a member boundary: find the next magic.
        garbage = False
        while True:
            if len(buf) < 3:
                more = read_more()
                if more:
                    buf += more
                    continue
            idx = buf.find(magic)
            if idx >= 0:
                garbage = garbage or bool(buf[:idx].strip(b"\x00\r\n\t "))
                pos += idx
                buf = buf[idx:]
                break
            keep = buf[-2:] if len(buf) >= 2 else buf
            garbage = garbage or bool(buf[: len(buf) - len(keep)].strip(b"\x00\r\n\t "))
            more = read_more()
            if not more:
                garbage = garbage or bool(keep.strip(b"\x00\r\n\t "))
                buf = b""
                break
            pos += len(buf) - len(keep)
            buf = keep + more
        if garbage:
            yield _BREAK
        if not buf:
            return

        member_start = pos
        decomp = zlib.decompressobj(31)
        fed_end = pos
        data = buf
        try:
            while not decomp.eof:
                if not data:
                    data = read_more()
                    if not data:
                        yield _BREAK  # truncated final member
                        return
                fed_end += len(data)
                while True:
                    out = decomp.decompress(data, CHUNK_SIZE)
                    if out:
                        yield out
                    data = decomp.unconsumed_tail
                    if decomp.eof or not data:
                        break
                data = b""
        except zlib.error as exc:
            log.debug("corrupt gzip member at offset %d: %s", member_start, exc)
            yield _BREAK
            fh.seek(member_start + 1)
            pos = member_start + 1
            buf = b""
            continue
        buf = decomp.unused_data
        pos = fed_end - len(buf)
        yield _MEMBER_END


class _ByteReader:
    """Buffered, pushback-capable reader over decoded chunks and markers.

    Filling stops at a ``_BREAK`` marker: reads that need bytes beyond it come
    back short until the caller acknowledges it with ``skip_break``.
    """

    def __init__(self, items: Iterable[object]):
        self._items = iter(items)
        self._buf = bytearray()
        self._pos = 0
        self._eof = False
        self.at_break = False
        self.offset = 0  # decoded offset of the next unread byte
        self.last_member_end = -1

    def _fill(self) -> bool:
        if self._eof or self.at_break:
            return False
        for item in self._items:
            if item is _MEMBER_END:
                self.last_member_end = self.offset + len(self._buf) - self._pos
                continue
            if item is _BREAK:
                self.at_break = True
                return False
            if item:
                if self._pos > CHUNK_SIZE and self._pos * 2 > len(self._buf):
                    del self._buf[: self._pos]
                    self._pos = 0
                self._buf += item
                return True
        self._eof = True
        return False

    @property
    def buffered(self) -> int:
        return len(self._buf) - self._pos

    def readline(self, limit: int = MAX_LINE_BYTES) -> bytes:
        start = self._pos
        scan = start
        while True:
            idx = self._buf.find(b"\n", scan, start + limit)
            if idx >= 0:
                end = idx + 1
                break
            if len(self._buf) - start >= limit:
                end = start + limit
                break
            scan = len(self._buf)
            before = len(self._buf) - start
            if not self._fill():
                end = len(self._buf)
                break
            # _fill may compact the buffer
            start = self._pos
            scan = start + before
        line = bytes(self._buf[start:end])
        self._pos = end
        self.offset += len(line)
        return line

    def peek_line(self, limit: int = MAX_LINE_BYTES) -> bytes:
        line = self.readline(limit)
        self.unread(line)
        return line

    def peek(self, n: int) -> bytes:
        while self.buffered < n and self._fill():
            pass
        return bytes(self._buf[self._pos : self._pos + n])

    def read(self, n: int) -> bytes:
        while self.buffered < n and self._fill():
            pass
        data = bytes(self._buf[self._pos : self._pos + n])
        self._pos += len(data)
        self.offset += len(data)
        return data

    def unread(self, data: bytes) -> None:
        if not data:
            return
        if self._pos >= len(data):
            self._pos -= len(data)
        else:
            self._buf[: self._pos] = data
            self._pos = 0
        self.offset -= len(data)

    def skip_break(self) -> None:
        """Drop buffered bytes preceding the break and resume after it."""
        self.offset += self.buffered
        self._buf = bytearray()
        self._pos = 0
        self.at_break = False


# -- record layer -------------------------------------------------------------


def _read_header_block(reader: _ByteReader) -> list[tuple[str, str]] | None:
    headers: list[tuple[str, str]] = []
    total = 0
    while True:
        line = reader.readline()
        if not line or not line.endswith(b"\n"):
            return None
        total += len(line)
        if total > MAX_HEADER_BYTES:
            return None
        stripped = line.rstrip(b"\r\n")
        if not stripped:
            return headers
        text = stripped.decode("utf-8", "replace")
        if text[:1] in (" ", "\t") and headers:
            name, value = headers[-1]
            headers[-1] = (name, value + " " + text.strip())
            continue
        name, sep, value = text.partition(":")
        if sep and name.strip():
            headers.append((name.strip(), value.strip()))


def _lookup(headers: list[tuple[str, str]], name: str) -> str | None:
    for key, value in headers:
        if key.lower() == name:
            return value
    return None


def _is_padding(following: bytes, reader: _ByteReader) -> bool:
    return not following or (len(following) < 5 and not following.strip(b"\x00\r\n\t "))


def _consume_separator(reader: _ByteReader, max_bytes: int) -> bytes:
    taken = bytearray()
    while len(taken) < max_bytes:
        b = reader.peek(1)
        if b not in (b"\r", b"\n"):
            break
        taken += reader.read(1)
    return bytes(taken)


class _Scan:
    """Per-file record iterator with skip accounting."""

    def __init__(self, reader: _ByteReader, stats: SourceStats, path: str, max_record_bytes: int):
        self.reader = reader
        self.stats = stats
        self.path = path
        self.cap = max_record_bytes
        self.resyncing = False

    def fail(self) -> None:
        # Consecutive failures before the next recognized boundary count once.
        if not self.resyncing:
            self.stats.records_skipped += 1
        self.resyncing = True

    def handle_short_read(self, partial: bytes = b"") -> None:
        """Account for a read cut short by a break or by end of stream.

        At a break the partial bytes belong to the bad member and are dropped;
        at end of stream they are pushed back so the tail is rescanned.
        """
        self.fail()
        if self.reader.at_break:
            self.reader.skip_break()
        else:
            self.reader.unread(partial)

    def member_corrupt(self, record_end: int) -> bool:
        r = self.reader
        return r.at_break and r.buffered == 0 and r.last_member_end < record_end

    def warc_records(self) -> Iterator[ArchiveRecord]:
        r = self.reader
        while True:
            start = r.offset
            line = r.readline()
            if not line:
                if r.at_break:
                    r.skip_break()
                    self.fail()
                    continue
                return
            if not line.strip():
                continue
            m = _WARC_VERSION_LINE.match(line)
            if not m:
                # The next record may start mid-line, right after garbage.
                idx = line.find(b"WARC/", 1)
                if idx > 0:
                    r.unread(line[idx:])
                self.fail()
                continue
            self.resyncing = False
            version = m.group(1).decode("ascii")
            headers = _read_header_block(r)
            if headers is None:
                self.handle_short_read()
                continue
            length_text = _lookup(headers, "content-length")
            try:
                length = int(length_text) if length_text is not None else -1
            except ValueError:
                length = -1
            if length < 0 or length > self.cap:
                self.fail()
                continue
            payload = r.read(length)
            if len(payload) < length:
                self.handle_short_read(payload)
                continue
            payload_end = r.offset
            sep = _consume_separator(r, 64)
            following = r.peek(5)
            framed = sep.startswith(b"\r\n\r\n")
            if not framed and following != b"WARC/" and not _is_padding(following, r):
                # Declared length disagrees with the framing; rescan the block.
                r.unread(sep)
                r.unread(payload)
                self.fail()
                continue
            if self.member_corrupt(payload_end):
                self.fail()
                continue
            kind = (_lookup(headers, "warc-type") or "").strip().lower()
            date = _lookup(headers, "warc-date")
            timestamp = warc_date_to_timestamp(date) if date else None
            if kind not in WARC_KINDS or timestamp is None:
                self.stats.records_skipped += 1
                continue
            self.stats.records_read += 1
            self.stats.count_kind(kind)
            yield ArchiveRecord(
                kind=kind,
                target_uri=(_lookup(headers, "warc-target-uri") or "").strip("<> ") or None,
                timestamp=timestamp,
                declared_mime=_lookup(headers, "content-type"),
                content_length=length,
                payload=payload,
                source_format="warc",
                headers=tuple(headers),
                version=version,
                path=self.path,
                offset=start,
            )

    def arc_records(self) -> Iterator[ArchiveRecord]:
        r = self.reader
        arc_version = 0
        while True:
            start = r.offset
            line = r.readline()
            if not line:
                if r.at_break:
                    r.skip_break()
                    self.fail()
                    continue
                return
            if not line.strip():
                continue
            fields = _parse_arc_header(line, arc_version)
            if fields is None:
                self.fail()
                continue
            self.resyncing = False
            url, mime, date, length = fields
            if length > self.cap:
                self.fail()
                continue
            body = r.read(length)
            if len(body) < length:
                self.handle_short_read(body)
                continue
            body_end = r.offset
            sep = _consume_separator(r, 2)
            following = r.peek_line()
            if (
                following
                and _parse_arc_header(following, arc_version) is None
                and not _is_padding(following, r)
            ):
                r.unread(sep)
                r.unread(body)
                self.fail()
                continue
            if self.member_corrupt(body_end):
                self.fail()
                continue
            if url.startswith("filedesc:"):
                arc_version = _arc_version(body) or arc_version
                continue
            timestamp = arc_date_to_timestamp(date)
            if timestamp is None:
                self.stats.records_skipped += 1
                continue
            self.stats.records_read += 1
            self.stats.count_kind(ARC_KIND)
            yield ArchiveRecord(
                kind=ARC_KIND,
                target_uri=url,
                timestamp=timestamp,
                declared_mime=mime or None,
                content_length=length,
                payload=body,
                source_format="arc",
                headers=(),
                version=str(arc_version or 1),
                path=self.path,
                offset=start,
            )


def _parse_arc_header(line: bytes, arc_version: int) -> tuple[str, str, str, int] | None:
    if not line.endswith(b"\n"):
        return None
    parts = line.rstrip(b"\r\n").split(b" ")
    if len(parts) < 5 or not parts[-1].isdigit():
        return None
    if arc_version == 2 or (arc_version == 0 and len(parts) >= 10 and parts[-8].isdigit()):
        if len(parts) < 10:
            return None
        url, date, mime = b" ".join(parts[:-9]), parts[-8], parts[-7]
    else:
        url, date, mime = b" ".join(parts[:-4]), parts[-3], parts[-2]
    if not date.isdigit() or not 12 <= len(date) <= 17 or not _SCHEME_PREFIX.match(url):
        return None
    return (
        url.decode("utf-8", "replace"),
        mime.decode("ascii", "replace"),
        date.decode("ascii"),
        int(parts[-1]),
    )


def _arc_version(block: bytes) -> int:
    first = block.split(b"\n", 1)[0].split()
    if first and first[0].isdigit():
        return int(first[0])
    return 0


def _sniff_format(reader: _ByteReader) -> str | None:
    line = reader.peek_line()
    if line.startswith(b"WARC/"):
        return "warc"
    if line.startswith(b"filedesc://") or _parse_arc_header(line, 0) is not None:
        return "arc"
    return None


def iter_file(
    path: str,
    stats: SourceStats,
    format_hint: str = "auto",
    max_record_bytes: int = DEFAULT_MAX_RECORD_BYTES,
) -> Iterator[ArchiveRecord]:
    """Yield the records of one archive file, updating ``stats`` as it goes."""
    with open(path, "rb") as fh:
        compressed = fh.read(2) == GZIP_MAGIC
        fh.seek(0)
        chunks = _gzip_chunks(fh, stats) if compressed else _plain_chunks(fh, stats)
        reader = _ByteReader(chunks)
        scan = _Scan(reader, stats, path, max_record_bytes)
        # Skip leading blank lines and any corrupt leading members.
        while True:
            head = reader.peek_line()
            if head and not head.strip():
                reader.readline()
                continue
            if not head and reader.at_break:
                reader.skip_break()
                scan.fail()
                continue
            break
        if not head:
            stats.files_read += 1
            return
        fmt = format_hint if format_hint != "auto" else _sniff_format(reader)
        if fmt is None:
            log.warning("skipping %s: unrecognized archive format", path)
            stats.files_skipped += 1
            return
        stats.files_read += 1
        records = scan.warc_records() if fmt == "warc" else scan.arc_records()
        yield from records


class ArchiveSource:
    """An ordered set of archive files scanned as one record stream."""

    def __init__(
        self,
        paths: Iterable[str],
        format_hint: str = "auto",
        max_record_bytes: int = DEFAULT_MAX_RECORD_BYTES,
    ):
        self.paths = [os.fspath(p) for p in paths]
        if not self.paths:
            raise ConfigError("an archive source needs at least one file")
        if format_hint not in FORMAT_HINTS:
            raise ConfigError(f"unknown format hint {format_hint!r}; expected one of {FORMAT_HINTS}")
        self.format_hint = format_hint
        self.max_record_bytes = max_record_bytes
        self.stats = SourceStats()
        self._iter: Iterator[ArchiveRecord] | None = None

    def __iter__(self) -> Iterator[ArchiveRecord]:
        for path in self.paths:
            yield from iter_file(path, self.stats, self.format_hint, self.max_record_bytes)


def open_source(
    paths: Iterable[str],
    format_hint: str = "auto",
    max_record_bytes: int = DEFAULT_MAX_RECORD_BYTES,
) -> ArchiveSource:
    paths = [os.fspath(p) for p in paths]
    for path in paths:
        if not os.path.isfile(path) or not os.access(path, os.R_OK):
            raise ConfigError(f"archive file not found or unreadable: {path}")
    return ArchiveSource(paths, format_hint, max_record_bytes)


def next_record(source: ArchiveSource) -> ArchiveRecord | None:
    """Pull the next record, or None once every file is exhausted."""
    if source._iter is None:
        source._iter = iter(source)
    return next(source._iter, None)


def collect_paths(targets: Iterable[str]) -> list[str]:
    """Expand files and directories into an ordered list of archive files.

    Directories contribute every file with an archive suffix, recursively, in
    sorted order; explicit file arguments are kept whatever their name.
    """
    out: list[str] = []
    for target in targets:
        target = os.fspath(target)
        if os.path.isdir(target):
            found = []
            for root, dirs, files in os.walk(target):
                dirs.sort()
                for name in files:
                    if name.lower().endswith(ARCHIVE_SUFFIXES):
                        found.append(os.path.join(root, name))
            out.extend(sorted(found))
        elif os.path.isfile(target):
            out.append(target)
        else:
            raise ConfigError(f"no such file or directory: {target}")
    return out


def split_http(record: ArchiveRecord) -> HttpPayload:
    """Split a response payload into status, headers and body."""
    payload = record.payload
    crlf = payload.find(b"\r\n\r\n")
    lflf = payload.find(b"\n\n")
    if crlf < 0 and lflf < 0:
        return _no_envelope(record)
    if crlf >= 0 and (lflf < 0 or crlf <= lflf):
        head, body = payload[:crlf], payload[crlf + 4 :]
    else:
        head, body = payload[:lflf], payload[lflf + 2 :]
    lines = head.split(b"\n")
    m = _STATUS_LINE.match(lines[0])
    if not m:
        return _no_envelope(record)
    status = int(m.group(1))
    if not 100 <= status <= 599:
        status = None
    headers: list[tuple[str, str]] = []
    for raw in lines[1:]:
        text = raw.rstrip(b"\r").decode("latin-1")
        if text[:1] in (" ", "\t") and headers:
            name, value = headers[-1]
            headers[-1] = (name, value + " " + text.strip())
            continue
        name, sep, value = text.partition(":")
        if sep and name.strip() and " " not in name.strip():
            headers.append((name.strip(), value.strip()))
    media, charset = parse_media_type(_lookup(headers, "content-type"))
    encoding = (_lookup(headers, "transfer-encoding") or "").lower()
    if "chunked" in encoding:
        body = _dechunk(body)
    return HttpPayload(status, tuple(headers), body, media, charset)


def _no_envelope(record: ArchiveRecord) -> HttpPayload:
    media, charset = (None, None)
    if record.source_format == "arc":
        media, charset = parse_media_type(record.declared_mime)
    return HttpPayload(None, (), record.payload, media, charset)


def _dechunk(body: bytes) -> bytes:
    """Concatenate chunk data; on any framing problem return the input."""
    out = bytearray()
    pos = 0
    while True:
        eol = body.find(b"\n", pos)
        if eol < 0:
            return body
        size_text = body[pos:eol].split(b";", 1)[0].strip()
        try:
            size = int(size_text, 16)
        except ValueError:
            return body
        if size == 0:
            return bytes(out)
        start = eol + 1
        if start + size > len(body):
            return body
        out += body[start : start + size]
        pos = start + size
        if body[pos : pos + 2] == b"\r\n":
            pos += 2
        elif body[pos : pos + 1] == b"\n":
            pos += 1
