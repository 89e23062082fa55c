import io
import os

import pytest
from hypothesis import given, strategies as st
from warcio.archiveiterator import ArchiveIterator
from warcio.statusandheaders import StatusAndHeaders
from warcio.warcwriter import WARCWriter

import warcgen
from warc_distill.archive_io import (
    ArchiveSource,
    SourceStats,
    arc_date_to_timestamp,
    collect_paths,
    iter_file,
    next_record,
    open_source,
    split_http,
    warc_date_to_timestamp,
)
from warc_distill.errors import ConfigError


def _write(tmp_path, name, data):
    p = tmp_path / name
    p.write_bytes(data)
    return str(p)


def _read(path, **kw):
    stats = SourceStats()
    return list(iter_file(path, stats, **kw)), stats


def _warcio_file(path, records, gz=True):
    """records: (kind, uri, body, date)"""
    with open(path, "wb") as fh:
        writer = WARCWriter(fh, gzip=gz)
        for kind, uri, body, date in records:
            http = None
            if kind == "response":
                http = StatusAndHeaders("200 OK", [("Content-Type", "text/html")], protocol="HTTP/1.1")
            rec = writer.create_warc_record(
                uri, kind, payload=io.BytesIO(body), http_headers=http,
                warc_headers_dict={"WARC-Date": date},
            )
            writer.write_record(rec)


def _warcio_blocks(path):
    out = []
    with open(path, "rb") as fh:
        for rec in ArchiveIterator(fh, no_record_parse=True):
            out.append((rec.rec_type, rec.rec_headers.get_header("WARC-Target-URI"), rec.raw_stream.read()))
    return out


# -- open_source ------------------------------------------------------------------


def test_empty_file_yields_nothing(tmp_path):
    recs, stats = _read(_write(tmp_path, "empty.warc", b""))
    assert recs == [] and stats.records_skipped == 0 and stats.files_skipped == 0


def test_three_gzip_members_from_independent_writer(tmp_path):
    path = str(tmp_path / "three.warc.gz")
    _warcio_file(path, [("response", f"http://x.org/{i}", b"<p>%d</p>" % i, "2014-09-01T12:00:00Z") for i in range(3)])
    data = open(path, "rb").read()
    assert data.count(b"\x1f\x8b\x08") >= 3
    recs, stats = _read(path)
    assert [r.target_uri for r in recs] == [f"http://x.org/{i}" for i in range(3)]
    assert stats.records_read == 3 and stats.records_skipped == 0


def test_matches_independent_reader_on_fixture(tmp_path, small_site):
    paths = warcgen.write_collection(tmp_path, small_site, n_files=2)
    for path in paths:
        recs, stats = _read(str(path))
        assert [(r.kind, r.target_uri, r.payload) for r in recs] == _warcio_blocks(str(path))
        assert stats.records_skipped == 0


@given(
    st.lists(
        st.tuples(
            st.sampled_from(["response", "resource", "metadata"]),
            st.from_regex(r"http://[a-z]{1,8}\.(com|org)/[a-z0-9/]{0,12}", fullmatch=True),
            st.binary(max_size=300),
        ),
        min_size=1,
        max_size=6,
    ),
    st.booleans(),
)
def test_round_trip_against_independent_writer(tmp_path_factory, records, gz):
    path = str(tmp_path_factory.mktemp("rt") / ("a.warc.gz" if gz else "a.warc"))
    _warcio_file(path, [(k, u, b, "2014-09-01T12:00:00Z") for k, u, b in records], gz)
    recs, stats = _read(path)
    assert stats.records_skipped == 0
    assert [(r.kind, r.target_uri, r.payload) for r in recs] == _warcio_blocks(path)
    for r in recs:
        assert r.content_length == len(r.payload)
        assert r.timestamp == "20140901120000"


@given(st.lists(st.binary(max_size=200), min_size=1, max_size=5))
def test_fixture_writer_round_trip(tmp_path_factory, bodies):
    raw = [warcgen.warc_record("resource", f"http://r.org/{i}", b, "2014-09-01T12:00:00Z",
                               content_type="application/octet-stream") for i, b in enumerate(bodies)]
    d = tmp_path_factory.mktemp("fw")
    plain, _ = _read(_write(d, "a.warc", b"".join(raw)))
    gz, _ = _read(_write(d, "a.warc.gz", warcgen.gzip_members(raw)))
    key = [(r.kind, r.target_uri, r.timestamp, r.content_length, r.payload) for r in plain]
    assert key == [("resource", f"http://r.org/{i}", "20140901120000", len(b), b) for i, b in enumerate(bodies)]
    assert key == [(r.kind, r.target_uri, r.timestamp, r.content_length, r.payload) for r in gz]


def test_plain_and_gzip_twins_identical(tmp_path, small_site):
    a = warcgen.write_collection(tmp_path / "gz", small_site, n_files=1, gz=True)[0]
    b = warcgen.write_collection(tmp_path / "plain", small_site, n_files=1, gz=False)[0]
    ra, _ = _read(str(a))
    rb, _ = _read(str(b))
    strip = lambda rs: [(r.kind, r.target_uri, r.timestamp, r.declared_mime, r.payload) for r in rs]
    assert strip(ra) == strip(rb)


def test_unrecognized_file_skipped(tmp_path):
    recs, stats = _read(_write(tmp_path, "junk.warc", b"\x00\x01this is not an archive\n" * 5))
    assert recs == [] and stats.files_skipped == 1


def test_missing_path_is_config_error(tmp_path):
    with pytest.raises(ConfigError, match="nope.warc"):
        open_source([str(tmp_path / "nope.warc")])
    with pytest.raises(ConfigError, match="nowhere"):
        collect_paths([str(tmp_path / "nowhere")])


def test_source_iterates_files_in_order(tmp_path):
    a = _write(tmp_path, "b.warc", warcgen.response_record("http://b.org/", b"<p>b</p>"))
    b = _write(tmp_path, "a.warc", warcgen.response_record("http://a.org/", b"<p>a</p>"))
    src = open_source([a, b])
    first, second, end = next_record(src), next_record(src), next_record(src)
    assert (first.target_uri, second.target_uri, end) == ("http://b.org/", "http://a.org/", None)
    assert src.stats.records_read == 2


def test_collect_paths_sorted_and_filtered(tmp_path):
    for name in ["z.warc.gz", "a.arc", "notes.txt", "sub/m.warc"]:
        p = tmp_path / name
        p.parent.mkdir(exist_ok=True)
        p.write_bytes(b"")
    got = [os.path.relpath(p, tmp_path) for p in collect_paths([str(tmp_path)])]
    assert got == ["a.arc", os.path.join("sub", "m.warc"), "z.warc.gz"]


def test_format_hint_validated(tmp_path):
    with pytest.raises(ConfigError):
        ArchiveSource([_write(tmp_path, "a.warc", b"")], format_hint="zip")


def test_warc_versions_accepted(tmp_path):
    versions = ["1.1", "1.0", "0.18", "0.17"]
    data = b"".join(warcgen.warc_record("resource", f"http://{i}.org/", b"x", version=v) for i, v in enumerate(versions))
    recs, _ = _read(_write(tmp_path, "v.warc", data))
    assert [r.version for r in recs] == versions


# -- recovery ---------------------------------------------------------------------


def test_two_record_warc(tmp_path):
    data = b"".join(warcgen._three()[:2])
    recs, stats = _read(_write(tmp_path, "two.warc", data))
    assert len(recs) == 2 and stats.records_skipped == 0


def test_corrupted_middle_length_keeps_neighbours(tmp_path):
    r = warcgen._three()
    clean, _ = _read(_write(tmp_path, "clean.warc", b"".join(r)))
    bad = r[0] + warcgen._set_length(r[1], b"77777") + r[2]
    recs, stats = _read(_write(tmp_path, "bad.warc", bad))
    assert [x.payload for x in recs] == [clean[0].payload, clean[2].payload]
    assert stats.records_skipped == 1


@pytest.mark.parametrize("name,data,intact", warcgen.corrupted_archives(), ids=lambda v: v if isinstance(v, str) else "")
def test_corrupted_corpus(tmp_path, name, data, intact):
    recs, stats = _read(_write(tmp_path, name, data))
    assert stats.records_skipped + stats.files_skipped > 0
    assert stats.records_read >= intact
    for r in recs:
        assert r.content_length == len(r.payload)


def test_record_over_cap_skipped(tmp_path):
    big = warcgen.warc_record("resource", "http://big.org/", b"x" * 5000)
    small = warcgen.warc_record("resource", "http://small.org/", b"y")
    recs, stats = _read(_write(tmp_path, "cap.warc", big + small), max_record_bytes=1000)
    assert [r.target_uri for r in recs] == ["http://small.org/"]
    assert stats.records_skipped == 1


@given(st.data())
def test_mutated_streams_never_abort(tmp_path_factory, data):
    raw = b"".join(warcgen._three())
    gz = data.draw(st.booleans())
    blob = bytearray(warcgen.gzip_members(warcgen._three()) if gz else raw)
    for _ in range(data.draw(st.integers(1, 4))):
        op = data.draw(st.sampled_from(["flip", "insert", "delete", "truncate"]))
        pos = data.draw(st.integers(0, max(0, len(blob) - 1)))
        if op == "flip" and blob:
            blob[pos] ^= data.draw(st.integers(1, 255))
        elif op == "insert":
            blob[pos:pos] = data.draw(st.binary(min_size=1, max_size=40))
        elif op == "delete":
            del blob[pos:pos + data.draw(st.integers(1, 40))]
        else:
            del blob[pos:]
    path = _write(tmp_path_factory.mktemp("mut"), "m.warc.gz" if gz else "m.warc", bytes(blob))
    recs, stats = _read(path)
    assert stats.records_read == len(recs)
    for r in recs:
        assert r.content_length == len(r.payload)
        assert len(r.timestamp) == 14 and r.timestamp.isdigit()


# -- ARC ------------------------------------------------------------------------------


ARC_ENTRIES = [
    ("http://www.qc.ca/env/page.html", "20080412093000", "text/html", b"<html><p>quebec</p></html>"),
    ("http://example.com/logo.gif", "20080412093005", "image/gif", warcgen.GIF_BYTES),
]


@pytest.mark.parametrize("version", [1, 2])
@pytest.mark.parametrize("gz", [False, True])
def test_arc_entries(tmp_path, version, gz):
    data = warcgen.arc_file(ARC_ENTRIES, version=version)
    if gz:
        data = warcgen.gzip_member(data)
    recs, stats = _read(_write(tmp_path, "x.arc.gz" if gz else "x.arc", data))
    assert [(r.kind, r.target_uri, r.timestamp, r.declared_mime, r.payload) for r in recs] == [
        ("arc-entry", u, d, m, b) for u, d, m, b in ARC_ENTRIES
    ]
    assert all(r.source_format == "arc" for r in recs)
    assert stats.records_skipped == 0
    http = split_http(recs[0])
    assert http.status is None and http.body == ARC_ENTRIES[0][3] and http.content_type == "text/html"


def test_arc_with_http_envelope(tmp_path):
    body = warcgen.http_response(b"<p>hi</p>", 200)
    recs, _ = _read(_write(tmp_path, "e.arc", warcgen.arc_file([("http://a.org/", "20080101000000", "text/html", body)])))
    http = split_http(recs[0])
    assert http.status == 200 and http.body == b"<p>hi</p>"


def test_warc_kinds_never_arc_entry(tmp_path, small_collection):
    for path in collect_paths([str(small_collection)]):
        recs, _ = _read(path)
        assert all(r.kind != "arc-entry" and r.source_format == "warc" for r in recs)


# -- timestamps -------------------------------------------------------------------------


@pytest.mark.parametrize("value,expected", [
    ("2014-09-01T12:00:00Z", "20140901120000"),
    ("2014-09-01T12:00:00.123456Z", "20140901120000"),
    ("2014-09-01T14:30:00+02:00", "20140901123000"),
    ("2014-09-01", "20140901000000"),
    ("2014", "20140101000000"),
    ("2014-13-01T00:00:00Z", None),
    ("nonsense", None),
])
def test_warc_dates(value, expected):
    assert warc_date_to_timestamp(value) == expected


@pytest.mark.parametrize("value,expected", [
    ("20080412093000", "20080412093000"),
    ("200804120930", "20080412093000"),
    ("20081332000000", None),
    ("2008x412093000", None),
])
def test_arc_dates(value, expected):
    assert arc_date_to_timestamp(value) == expected


# -- split_http -------------------------------------------------------------------------


def _resp(payload, kind="response", fmt="warc", mime=None):
    from warc_distill.archive_io import ArchiveRecord

    return ArchiveRecord(kind, "http://a.org/", "20140901120000", mime, len(payload), payload, fmt)


def test_split_canonical():
    h = split_http(_resp(b"HTTP/1.1 200 OK\r\nContent-Type: text/html\r\n\r\n<html>hi"))
    assert (h.status, h.content_type, h.body) == (200, "text/html", b"<html>hi")


def test_split_bare_lf_and_charset():
    h = split_http(_resp(b"HTTP/1.0 404 Not Found\nContent-Type: text/html; charset=ISO-8859-1\n\nbody"))
    assert (h.status, h.content_type, h.charset, h.body) == (404, "text/html", "iso-8859-1", b"body")


def test_split_without_separator():
    payload = b"HTTP/1.1 200 OK\r\nContent-Type: text/html"
    h = split_http(_resp(payload))
    assert h.status is None and h.body == payload


def test_split_without_status_line():
    payload = b"<html>\r\n\r\nno head</html>"
    h = split_http(_resp(payload))
    assert h.status is None and h.body == payload


def test_split_status_out_of_range_and_bad_headers():
    h = split_http(_resp(b"HTTP/1.1 999 Odd\r\nGood: yes\r\nthis is not a header\r\n: empty\r\n\r\nx"))
    assert h.status is None
    assert h.headers == (("Good", "yes"),)


def test_split_chunked():
    payload = b"HTTP/1.1 200 OK\r\nTransfer-Encoding: chunked\r\n\r\n5\r\nhello\r\n6\r\n world\r\n0\r\n\r\n"
    assert split_http(_resp(payload)).body == b"hello world"


def test_split_header_lookup_case_insensitive():
    h = split_http(_resp(b"HTTP/1.1 200 OK\r\ncontent-TYPE: Text/HTML\r\n\r\n"))
    assert h.header("Content-Type") == "Text/HTML" and h.content_type == "text/html"


@given(st.binary(max_size=400))
def test_split_never_fails(payload):
    h = split_http(_resp(payload))
    assert len(h.body) <= len(payload)
    assert h.status is None or 100 <= h.status <= 599
