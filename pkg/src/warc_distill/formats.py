"""Row encoding (CSV, JSON lines) and atomic file output."""

from __future__ import annotations

import contextlib
import csv
import json
import os
import tempfile
from typing import Iterable, Iterator, Sequence

from .errors import ProcessingError

FORMATS = ("csv", "jsonl")
_NEEDS_QUOTES = frozenset(',"\r\n')


def csv_field(value) -> str:
    text = "" if value is None else str(value)
    if _NEEDS_QUOTES.intersection(text):
        return '"' + text.replace('"', '""') + '"'
    return text


def csv_line(values: Sequence) -> str:
    # csv.writer leaves a bare CR unquoted when the terminator is LF.
    return ",".join(csv_field(v) for v in values) + "\n"


def jsonl_line(columns: Sequence[str], values: Sequence) -> str:
    return json.dumps(dict(zip(columns, values)), ensure_ascii=False) + "\n"


def encode_row(fmt: str, columns: Sequence[str], values: Sequence) -> str:
    if fmt == "csv":
        return csv_line(values)
    return jsonl_line(columns, values)


def header(fmt: str, columns: Sequence[str]) -> str:
    return csv_line(columns) if fmt == "csv" else ""


@contextlib.contextmanager
def atomic_output(path: str, mode: str = "w"):
    """Write to a temp file beside ``path``; rename into place only on success."""
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    try:
        os.makedirs(directory, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=directory, prefix="." + os.path.basename(path) + ".", suffix=".tmp")
    except OSError as exc:
        raise ProcessingError(f"cannot write {path}: {exc}") from exc
    kwargs = {"encoding": "utf-8", "newline": ""} if "b" not in mode else {}
    try:
        with os.fdopen(fd, mode, **kwargs) as fh:
            yield fh
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException as exc:
        with contextlib.suppress(OSError):
            os.unlink(tmp)
        if isinstance(exc, OSError):
            raise ProcessingError(f"cannot write {path}: {exc}") from exc
        raise


def write_rows(path: str, fmt: str, columns: Sequence[str], rows: Iterable[Sequence]) -> int:
    if fmt not in FORMATS:
        raise ValueError(f"unknown output format {fmt!r}")
    n = 0
    with atomic_output(path) as fh:
        fh.write(header(fmt, columns))
        for values in rows:
            fh.write(encode_row(fmt, columns, values))
            n += 1
    return n


def read_csv(path: str) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        rows = list(reader)
    if not rows:
        return [], []
    return rows[0], rows[1:]


def iter_jsonl(path: str) -> Iterator[dict]:
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                yield json.loads(line)
