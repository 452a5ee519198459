"""Byte-oriented canonical URLs.

Every URL that flows through the crawler is a :class:`CrawlUrl`: two byte
strings holding the scheme+authority and the path+query of a fully
normalized http(s) URL.  The concatenation of the two parts is the canonical
serialization written to sieve files, virtual queues, datagrams and WARC
headers.

Normalization applied by :func:`parse`:

* reference resolution against a base URL (generic syntax, with the
  backward-compatible reading of ``http:g`` as a relative reference);
* lowercase scheme and host, IDNA-encoded internationalized hosts, default
  ports removed;
* percent-escapes with uppercase hex, unreserved characters unescaped,
  characters outside the allowed set escaped as UTF-8;
* dot segments removed, empty path turned into ``/``, empty query and
  fragment dropped.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

import idna
import mmh3

from hostwise.core.constants import DEFAULT_PORTS, HASH_SEED, SUPPORTED_SCHEMES


class UrlError(ValueError):
    """Base class for URL parsing failures."""


class MalformedUrl(UrlError):
    """The input cannot be parsed as an http(s) URL."""


class UnsupportedScheme(UrlError):
    """The input uses a scheme other than http or https."""


class MissingBase(UrlError):
    """A relative reference was given without a base URL."""


_URI_RE = re.compile(r"^(?:([^:/?#]+):)?(?://([^/?#]*))?([^?#]*)(?:\?([^#]*))?(?:#(.*))?$", re.S)
_SCHEME_RE = re.compile(r"^[A-Za-z][A-Za-z0-9+.\-]*$")
_STRIPPED = re.compile(r"[\t\n\r]")
_HEX = frozenset(b"0123456789abcdefABCDEF")
_UNRESERVED = frozenset(
    b"ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789-._~"
)
_SUB_DELIMS = frozenset(b"!$&'()*+,;=")
PATH_SAFE = _UNRESERVED | _SUB_DELIMS | frozenset(b":@/")
QUERY_SAFE = PATH_SAFE | frozenset(b"?")
_USERINFO_SAFE = _UNRESERVED | _SUB_DELIMS | frozenset(b":")
_BAD_HOST_CHARS = frozenset(' <>"{}|\\^`%')


@dataclass(frozen=True, slots=True)
class CrawlUrl:
    """A normalized URL split into scheme+authority and path+query."""

    scheme_authority: bytes
    path_query: bytes

    def __bytes__(self) -> bytes:
        return self.scheme_authority + self.path_query

    def __str__(self) -> str:
        return bytes(self).decode("ascii")

    @property
    def scheme(self) -> str:
        return self.scheme_authority.split(b"://", 1)[0].decode("ascii")

    @property
    def authority(self) -> str:
        return self.scheme_authority.split(b"://", 1)[1].decode("ascii")

    @property
    def host(self) -> str:
        """Host name without user-info and port."""
        host, _ = _split_host_port(self.authority.rpartition("@")[2])
        return host

    @property
    def path(self) -> bytes:
        return self.path_query.split(b"?", 1)[0]

    @property
    def query(self) -> bytes | None:
        parts = self.path_query.split(b"?", 1)
        return parts[1] if len(parts) == 2 else None


def percent_normalize(text: str, safe: frozenset[int]) -> str:
    data = text.encode("utf-8")
    out = bytearray()
    i = 0
    n = len(data)
    while i < n:
        byte = data[i]
        if byte == 0x25:  # '%'
            if i + 2 < n and data[i + 1] in _HEX and data[i + 2] in _HEX:
                value = int(data[i + 1 : i + 3], 16)
                if value in _UNRESERVED:
                    out.append(value)
                else:
                    out += b"%%%02X" % value
                i += 3
                continue
            out += b"%25"
        elif byte in safe:
            out.append(byte)
        else:
            out += b"%%%02X" % byte
        i += 1
    return out.decode("ascii")


def remove_dot_segments(path: str) -> str:
    """Remove ``.`` and ``..`` segments from a path."""
    output: list[str] = []
    while path:
        if path.startswith("../"):
            path = path[3:]
        elif path.startswith("./"):
            path = path[2:]
        elif path.startswith("/./"):
            path = path[2:]
        elif path == "/.":
            path = "/"
        elif path.startswith("/../"):
            path = path[3:]
            if output:
                output.pop()
        elif path == "/..":
            path = "/"
            if output:
                output.pop()
        elif path in (".", ".."):
            path = ""
        else:
            start = 1 if path.startswith("/") else 0
            cut = path.find("/", start)
            if cut == -1:
                cut = len(path)
            output.append(path[:cut])
            path = path[cut:]
    return "".join(output)


def _split_host_port(hostport: str) -> tuple[str, str | None]:
    if hostport.startswith("["):
        end = hostport.find("]")
        if end == -1:
            raise MalformedUrl(f"unterminated IPv6 literal: {hostport!r}")
        rest = hostport[end + 1 :]
        if rest and not rest.startswith(":"):
            raise MalformedUrl(f"garbage after IPv6 literal: {hostport!r}")
        return hostport[: end + 1], (rest[1:] if rest else None)
    host, sep, port = hostport.rpartition(":")
    if not sep:
        return hostport, None
    return host, port


def _normalize_host(host: str) -> str:
    if not host:
        raise MalformedUrl("empty host")
    if host.startswith("["):
        return host.lower()
    if any(ch in _BAD_HOST_CHARS for ch in host):
        raise MalformedUrl(f"invalid character in host: {host!r}")
    if host.isascii():
        return host.lower()
    try:
        return idna.encode(host, uts46=True).decode("ascii")
    except idna.IDNAError as exc:
        raise MalformedUrl(f"invalid internationalized host {host!r}: {exc}") from exc


def _normalize_authority(scheme: str, authority: str) -> str:
    userinfo, at, hostport = authority.rpartition("@")
    host, port = _split_host_port(hostport)
    host = _normalize_host(host)
    result = host
    if port:
        if not port.isdigit():
            raise MalformedUrl(f"invalid port: {port!r}")
        number = int(port)
        if number > 65535:
            raise MalformedUrl(f"port out of range: {number}")
        if number != DEFAULT_PORTS[scheme]:
            result = f"{host}:{number}"
    if at:
        result = f"{percent_normalize(userinfo, _USERINFO_SAFE)}@{result}"
    return result


def _merge(base_path: str, ref_path: str) -> str:
    return base_path[: base_path.rfind("/") + 1] + ref_path


def parse(raw: str, base: CrawlUrl | None = None) -> CrawlUrl:
    """Parse ``raw`` (optionally relative to ``base``) into a :class:`CrawlUrl`.

    Raises:
        MalformedUrl: If the reference cannot be parsed.
        UnsupportedScheme: If the resolved scheme is not http or https.
        MissingBase: If ``raw`` is relative and no base is given.
    """
    text = _STRIPPED.sub("", raw.strip(" \x00\x0b\x0c\t\r\n"))
    match = _URI_RE.match(text)
    if match is None:
        raise MalformedUrl(f"unparseable URL: {raw!r}")
    scheme, authority, path, query, _fragment = match.groups()

    if scheme is not None:
        if not _SCHEME_RE.match(scheme):
            raise MalformedUrl(f"invalid scheme in {raw!r}")
        scheme = scheme.lower()
        if scheme not in SUPPORTED_SCHEMES:
            raise UnsupportedScheme(f"unsupported scheme {scheme!r} in {raw!r}")
        if base is not None and authority is None and scheme == base.scheme:
            scheme = None

    path = percent_normalize(path, PATH_SAFE)
    if query is not None:
        query = percent_normalize(query, QUERY_SAFE)

    if scheme is not None:
        if authority is None:
            raise MalformedUrl(f"missing host in {raw!r}")
        target_authority = _normalize_authority(scheme, authority)
        target_path = remove_dot_segments(path)
        target_query = query
    else:
        if base is None:
            raise MissingBase(f"relative reference without base: {raw!r}")
        scheme = base.scheme
        if authority is not None:
            target_authority = _normalize_authority(scheme, authority)
            target_path = remove_dot_segments(path)
            target_query = query
        else:
            target_authority = base.authority
            base_path = base.path.decode("ascii")
            if path == "":
                target_path = base_path
                if query is None:
                    base_query = base.query
                    query = base_query.decode("ascii") if base_query is not None else None
            elif path.startswith("/"):
                target_path = remove_dot_segments(path)
            else:
                target_path = remove_dot_segments(_merge(base_path, path))
            target_query = query

    if not target_path:
        target_path = "/"
    path_query = target_path
    if target_query:
        path_query = f"{target_path}?{target_query}"
    return CrawlUrl(
        scheme_authority=f"{scheme}://{target_authority}".encode("ascii"),
        path_query=path_query.encode("ascii"),
    )


def from_canonical(data: bytes) -> CrawlUrl:
    """Rebuild a :class:`CrawlUrl` from its canonical serialization.

    The input must come from ``bytes(url)``; no normalization is applied.
    """
    start = data.find(b"://")
    if start == -1:
        raise MalformedUrl(f"not a canonical URL: {data!r}")
    cut = data.find(b"/", start + 3)
    if cut == -1:
        return CrawlUrl(data, b"/")
    return CrawlUrl(data[:cut], data[cut:])


def split(url: CrawlUrl) -> tuple[bytes, bytes]:
    return url.scheme_authority, url.path_query


def hash64(url: CrawlUrl) -> int:
    """Stable unsigned 64-bit fingerprint of the canonical serialization."""
    return mmh3.hash64(bytes(url), HASH_SEED, signed=False)[0]


def hash128(url: CrawlUrl) -> int:
    """Stable unsigned 128-bit fingerprint of the canonical serialization."""
    return mmh3.hash128(bytes(url), HASH_SEED, signed=False)


__all__ = [
    "CrawlUrl",
    "MalformedUrl",
    "MissingBase",
    "UnsupportedScheme",
    "UrlError",
    "from_canonical",
    "hash128",
    "hash64",
    "parse",
    "percent_normalize",
    "remove_dot_segments",
    "split",
]
