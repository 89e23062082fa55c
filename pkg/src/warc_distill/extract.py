"""URL, HTML and payload helpers used by filter and extract stages.

Everything here is a pure function of its arguments. None of it raises on
malformed input: HTML handling is a tolerant regex scan rather than a parse,
so broken markup degrades the result instead of failing.
"""

from __future__ import annotations

import codecs
import hashlib
import html
import re
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable
from urllib.parse import urljoin, urlsplit

from .archive_io import ARC_KIND, ArchiveRecord, HttpPayload, parse_media_type
from .errors import ConfigError

HTML_TYPES = frozenset({"text/html", "application/xhtml+xml"})

EXTENSION_TYPES = {
    "htm": "text/html",
    "html": "text/html",
    "shtml": "text/html",
    "xhtml": "application/xhtml+xml",
    "css": "text/css",
    "js": "application/javascript",
    "json": "application/json",
    "xml": "application/xml",
    "txt": "text/plain",
    "csv": "text/csv",
    "gif": "image/gif",
    "png": "image/png",
    "jpg": "image/jpeg",
    "jpeg": "image/jpeg",
    "svg": "image/svg+xml",
    "webp": "image/webp",
    "bmp": "image/bmp",
    "ico": "image/vnd.microsoft.icon",
    "tif": "image/tiff",
    "tiff": "image/tiff",
    "pdf": "application/pdf",
    "zip": "application/zip",
    "gz": "application/gzip",
    "mp3": "audio/mpeg",
    "mp4": "video/mp4",
    "swf": "application/x-shockwave-flash",
}

MAGIC_TYPES = (
    (b"GIF87a", "image/gif"),
    (b"GIF89a", "image/gif"),
    (b"\x89PNG\r\n\x1a\n", "image/png"),
    (b"\xff\xd8\xff", "image/jpeg"),
    (b"%PDF-", "application/pdf"),
)
_HTML_MAGIC = re.compile(rb"^\s*(?:<!--.*?-->\s*)*<(?:!doctype\s+html|html|head|body)[\s>]", re.I | re.S)

OCTET_STREAM = "application/octet-stream"

_MEDIA_TYPE = re.compile(r"^[a-z0-9!#$&^_.+-]+/[a-z0-9!#$&^_.+-]+$")
_INVISIBLE = re.compile(
    r"<!--.*?(?:-->|$)|<(script|style)\b[^>]*>.*?(?:</\1\s*>|$)", re.I | re.S
)
_ANCHOR_TAG = re.compile(r"""<(/?)a(?=[\s/>])((?:[^>"']|"[^"]*"|'[^']*')*)>""", re.I)
_HREF = re.compile(
    r"""(?:^|[\s"'/])href\s*=\s*(?:"([^"]*)"|'([^']*)'|([^\s"'>]+))""", re.I
)
_INLINE_TAGS = re.compile(
    r"</?(?:a|abbr|b|bdi|bdo|big|cite|code|data|dfn|em|font|i|kbd|mark|q|s|samp|small|"
    r"span|strike|strong|sub|sup|time|tt|u|var|wbr)(?:\s[^>]*)?/?>",
    re.I,
)
_ANY_TAG = re.compile(r"<[A-Za-z/!?][^>]*>")
_TRAILING_TAG = re.compile(r"<[A-Za-z/!?][^>]*$")
_META_CHARSET = re.compile(rb"""<meta[^>]+charset\s*=\s*["']?([A-Za-z0-9_.:-]+)""", re.I)
_DROP_CHARS = str.maketrans("", "", "\t\r\n")
_ABSOLUTE_HREF = re.compile(r"[A-Za-z][A-Za-z0-9+.-]*://[^/?#\\]")
_TOKEN = re.compile(r"[^\W_]+")


@dataclass(frozen=True)
class Hyperlink:
    src: str
    dest: str
    anchor: str


@dataclass(frozen=True)
class MimeClass:
    media_type: str
    origin: str  # http-header | extension | magic-bytes | default

    def __str__(self) -> str:
        return self.media_type

    @property
    def is_html(self) -> bool:
        return self.media_type in HTML_TYPES


@lru_cache(maxsize=1 << 15)
def extract_domain(url: str) -> str:
    """Lowercase host of ``url`` without port or leading ``www.`` labels.

    Returns "" for anything that does not parse to a host.
    """
    if not url:
        return ""
    try:
        host = urlsplit(url.strip()).hostname
    except ValueError:
        return ""
    if not host:
        return ""
    host = host.rstrip(".")
    while host.startswith("www.") and len(host) > 4:
        host = host[4:]
    return host


def decode_html(data: bytes | str, charset: str | None = None) -> str:
    """Decode page bytes with the declared (or meta) charset, else lossy UTF-8."""
    if isinstance(data, str):
        return data
    if not charset:
        m = _META_CHARSET.search(data, 0, 2048)
        if m:
            charset = m.group(1).decode("ascii", "replace")
    if charset:
        try:
            codecs.lookup(charset)
            return data.decode(charset, "replace")
        except (LookupError, ValueError):
            pass
    return data.decode("utf-8", "replace")


def _normalize_space(text: str) -> str:
    return " ".join(text.split())


def _visible_text(fragment: str) -> str:
    fragment = _INLINE_TAGS.sub("", fragment)
    fragment = _ANY_TAG.sub(" ", fragment)
    fragment = _TRAILING_TAG.sub(" ", fragment)
    # NUL is never visible text and breaks many CSV consumers.
    return _normalize_space(html.unescape(fragment).replace("\x00", " "))


@lru_cache(maxsize=1 << 10)
def _scheme_base(base_url: str) -> str:
    try:
        return urlsplit(base_url).scheme + "://base/"
    except ValueError:
        return base_url


def _resolve(base_url: str, href: str) -> str | None:
    href = html.unescape(href).translate(_DROP_CHARS).strip()
    if not href or href.startswith("#"):
        return None
    lowered = href[:11].lower()
    if lowered.startswith("javascript:") or lowered.startswith("mailto:"):
        return None
    # An href with its own scheme and host depends on the base only through
    # the base's scheme, so those joins are shared across pages.
    if _ABSOLUTE_HREF.match(href):
        return _join(_scheme_base(base_url), href)
    return _join.__wrapped__(base_url, href)


@lru_cache(maxsize=1 << 15)
def _join(base_url: str, href: str) -> str | None:
    try:
        dest = urljoin(base_url, href)
        parts = urlsplit(dest)
        if not parts.scheme or not parts.netloc or not parts.hostname:
            return None
        # Second pass makes the result a fixed point of resolution.
        dest = urljoin(dest, dest)
    except ValueError:
        return None
    if " " in dest:
        dest = dest.replace(" ", "%20")
    return dest


def extract_links(base_url: str, html_bytes: bytes | str, charset: str | None = None) -> list[Hyperlink]:
    """Return one Hyperlink per ``<a href>`` in document order.

    Relative references resolve against ``base_url``. Fragment-only,
    ``javascript:``, ``mailto:`` and empty hrefs are dropped, as is anything
    that does not resolve to an absolute URL with a host.
    """
    doc = decode_html(html_bytes, charset)
    if "<" not in doc:
        return []
    doc = _INVISIBLE.sub(" ", doc)
    spans: list[tuple[str | None, int, int]] = []
    current: tuple[str | None, int] | None = None
    for m in _ANCHOR_TAG.finditer(doc):
        if current is not None:
            spans.append((current[0], current[1], m.start()))
            current = None
        if not m.group(1):
            h = _HREF.search(m.group(2))
            href = None
            if h:
                href = h.group(1) if h.group(1) is not None else h.group(2) if h.group(2) is not None else h.group(3)
            current = (href, m.end())
    if current is not None:
        spans.append((current[0], current[1], len(doc)))
    links = []
    for href, start, end in spans:
        if href is None:
            continue
        dest = _resolve(base_url, href)
        if dest is None:
            continue
        links.append(Hyperlink(base_url, dest, _visible_text(doc[start:end])))
    return links


def extract_text(html_bytes: bytes | str, charset: str | None = None) -> str:
    """Plain text of a page: no script/style/comments, no tags, entities decoded."""
    doc = decode_html(html_bytes, charset)
    doc = _INVISIBLE.sub(" ", doc)
    return _visible_text(doc)


def detect_mime(
    http: HttpPayload | None,
    url: str | None,
    leading_bytes: bytes = b"",
    declared: str | None = None,
) -> MimeClass:
    """Classify a payload: HTTP Content-Type, then URL extension, then magic bytes.

    ``declared`` is an extra header-level hint (an ARC header line's MIME
    field) consulted only when the HTTP envelope has no Content-Type.
    """
    media = http.content_type if http is not None else None
    if not media and declared:
        media = parse_media_type(declared)[0]
    if media and _MEDIA_TYPE.match(media) and media not in ("unk", "no-type"):
        return MimeClass(media, "http-header")
    ext = _url_extension(url)
    if ext in EXTENSION_TYPES:
        return MimeClass(EXTENSION_TYPES[ext], "extension")
    head = leading_bytes[:64]
    for magic, kind in MAGIC_TYPES:
        if head.startswith(magic):
            return MimeClass(kind, "magic-bytes")
    if _HTML_MAGIC.match(leading_bytes[:1024]):
        return MimeClass("text/html", "magic-bytes")
    return MimeClass(OCTET_STREAM, "default")


def _url_extension(url: str | None) -> str:
    if not url:
        return ""
    try:
        path = urlsplit(url).path
    except ValueError:
        return ""
    name = path.rsplit("/", 1)[-1]
    if "." not in name:
        return ""
    return name.rsplit(".", 1)[-1].lower()


def is_valid_page(record: ArchiveRecord, http: HttpPayload) -> bool:
    """True for a successfully captured HTML page.

    Responses need HTTP 200; ARC entries may lack the HTTP envelope entirely.
    robots.txt captures never count, whatever they claim to be.
    """
    if record.kind not in ("response", ARC_KIND):
        return False
    if http.status is None:
        if record.kind != ARC_KIND:
            return False
    elif http.status != 200:
        return False
    url = record.target_uri or ""
    if url.endswith("robots.txt"):
        return False
    declared = record.declared_mime if record.kind == ARC_KIND else None
    return detect_mime(http, url, http.body[:1024], declared).is_html


def checksum_payload(data: bytes) -> str:
    return hashlib.md5(data, usedforsecurity=False).hexdigest()


def keyword_counts(text: str, keywords: Iterable[str]) -> dict[str, int]:
    """Case-insensitive whole-token counts for each keyword.

    Text splits on non-alphanumeric boundaries; a keyword spanning several
    tokens ("prime minister") counts consecutive token matches.
    """
    keywords = list(keywords)
    if not keywords or any(not k or not _TOKEN.findall(k) for k in keywords):
        raise ConfigError("keyword_counts needs a non-empty list of non-empty keywords")
    tokens = _TOKEN.findall(text.lower())
    single: dict[str, int] = {}
    for tok in tokens:
        single[tok] = single.get(tok, 0) + 1
    counts = {}
    for keyword in keywords:
        parts = _TOKEN.findall(keyword.lower())
        if len(parts) == 1:
            counts[keyword] = single.get(parts[0], 0)
        else:
            n = len(parts)
            counts[keyword] = sum(
                1 for i in range(len(tokens) - n + 1) if tokens[i : i + n] == parts
            )
    return counts
