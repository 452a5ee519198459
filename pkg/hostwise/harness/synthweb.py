"""The deterministic synthetic web.

Host ``i`` is named ``h{i:05d}.<domain>``.  Its pages are ``/`` (page 0) and
``/page/<k>`` for ``0 < k < pages(host)``.  Page ``k`` links to its tree
children ``k*b+1 .. k*b+b`` (``b`` = branching), so a breadth-first visit of
the tree from ``/`` reaches every page; extra links add random internal and
external edges.  Everything is derived from ``mmh3`` hashes of the seed, the
host and the page number, never from global random state.
"""

from __future__ import annotations

import random
import re
from collections import deque
from dataclasses import dataclass, field
from urllib.parse import urljoin, urlsplit

import mmh3

from hostwise.harness.spec import SyntheticWebSpec

HOST_RE = re.compile(r"^h(\d{5})\.(.+)$")
PAGE_RE = re.compile(r"^/page/(\d+)$")

WORDS = (
    "alpha bravo charlie delta echo foxtrot golf hotel india juliet kilo lima mike "
    "november oscar papa quebec romeo sierra tango uniform victor whiskey xray "
    "yankee zulu amber basalt cedar dune ember fjord granite harbor iris jasper "
    "kelp lagoon meadow nectar onyx pebble quartz reef sable thistle umber valley "
    "willow yarrow zephyr"
).split()
MONTHS = (
    "January February March April May June July August September October November December"
).split()


class NotFound(LookupError):
    """The host or path is outside the synthetic web."""


@dataclass(frozen=True)
class SyntheticResponse:
    status: int
    body: bytes
    content_type: str = "text/html; charset=utf-8"
    delay_ms: int = 0
    reset: bool = False
    headers: dict[str, str] = field(default_factory=dict)


def _rng(spec: SyntheticWebSpec, *parts: object) -> random.Random:
    key = ":".join(str(p) for p in (spec.seed, *parts)).encode()
    return random.Random(mmh3.hash64(key, signed=False)[0])


def _unit(spec: SyntheticWebSpec, *parts: object) -> float:
    key = ":".join(str(p) for p in (spec.seed, *parts)).encode()
    return mmh3.hash64(key, signed=False)[0] / 2**64


def host_name(spec: SyntheticWebSpec, index: int) -> str:
    return f"h{index:05d}.{spec.domain}"


def host_index(spec: SyntheticWebSpec, host: str) -> int:
    """Index of a synthetic host name.

    Raises:
        NotFound: If the name is not one of the synthetic hosts.
    """
    match = HOST_RE.match(host.lower().split(":", 1)[0])
    if match is None or match.group(2) != spec.domain:
        raise NotFound(host)
    index = int(match.group(1))
    if index >= spec.host_count:
        raise NotFound(host)
    return index


def synthetic_ip(spec: SyntheticWebSpec, host: str) -> str:
    """Fake address of a host; hosts share ``spec.ip_count`` addresses."""
    try:
        slot = host_index(spec, host) % spec.ip_count
    except NotFound:
        slot = mmh3.hash(host.lower(), spec.seed & 0xFFFFFFFF, signed=False) % spec.ip_count
    return f"10.{(slot >> 16) & 0xFF}.{(slot >> 8) & 0xFF}.{slot & 0xFF}"


def page_count(spec: SyntheticWebSpec, index: int) -> int:
    return _rng(spec, "pages", index).randint(spec.pages_min, spec.pages_max)


def page_path(k: int) -> str:
    return "/" if k == 0 else f"/page/{k}"


def page_number(path: str) -> int:
    """Page number of a path (query ignored).

    Raises:
        NotFound: If the path is not a page path.
    """
    path = path.split("?", 1)[0]
    if path == "/":
        return 0
    match = PAGE_RE.match(path)
    if match is None:
        raise NotFound(path)
    return int(match.group(1))


def is_near_duplicate(spec: SyntheticWebSpec, index: int, k: int) -> bool:
    return k > 0 and _unit(spec, "dup", index, k) < spec.near_duplicate_fraction


def canonical_id(spec: SyntheticWebSpec, host: str, path: str) -> tuple[int, int]:
    """The (host, page) whose content a page copies; itself for archetypes."""
    index = host_index(spec, host)
    k = page_number(path)
    return (index, 0) if is_near_duplicate(spec, index, k) else (index, k)


def tree_children(spec: SyntheticWebSpec, index: int, k: int) -> list[int]:
    n = page_count(spec, index)
    first = k * spec.branching + 1
    return [c for c in range(first, first + spec.branching) if c < n]


def links(spec: SyntheticWebSpec, index: int, k: int) -> list[str]:
    """Link targets of page ``k`` as they appear in its HTML, in order."""
    if is_near_duplicate(spec, index, k):
        return links(spec, index, 0)
    n = page_count(spec, index)
    rng = _rng(spec, "links", index, k)
    out = ["/"] + [page_path(p) for p in range(1, min(spec.nav_links, n))]
    out.extend(page_path(c) for c in tree_children(spec, index, k))
    for _ in range(rng.randint(spec.outdegree_min, spec.outdegree_max)):
        if spec.host_count > 1 and rng.random() < spec.external_fraction:
            other = rng.randrange(spec.host_count - 1)
            other += other >= index
            out.append(f"http://{host_name(spec, other)}/")
            continue
        target = rng.randrange(n)
        if k == 0 or target == 0:
            out.append(page_path(target))
        else:
            # Relative to /page/<k>, resolves to /page/<target>.
            out.append(str(target))
    return out


def _words(rng: random.Random, count: int) -> str:
    return " ".join(rng.choice(WORDS) for _ in range(count))


def _render(spec: SyntheticWebSpec, index: int, k: int) -> bytes:
    source = 0 if is_near_duplicate(spec, index, k) else k
    rng = _rng(spec, "text", index, source)
    # Counters and dates vary on every page, copies included.
    noise = _rng(spec, "noise", index, k)
    target = rng.randint(spec.page_size_min, spec.page_size_max)
    parts = [
        "<!DOCTYPE html>",
        '<html><head><meta charset="utf-8">',
        f"<title>{_words(rng, 3)}</title></head><body>",
        f"<h1>{_words(rng, 4)}</h1>",
        '<ul class="nav">',
    ]
    for href in links(spec, index, k):
        parts.append(f'<li><a href="{href}">{_words(rng, 2)}</a></li>')
    parts.append("</ul>")
    footer = (
        f'<p class="footer">Visitors: {noise.randint(1, 999_999)} '
        f"Updated {noise.randint(2000, 2030)}-{noise.randint(1, 12):02d}-"
        f"{noise.randint(1, 28):02d} on {MONTHS[noise.randrange(12)]} "
        f"{noise.randint(1, 28)}</p></body></html>"
    )
    # The footer length varies with the noise; copies must get the same filler.
    size = sum(len(p) for p in parts)
    while size < target:
        paragraph = f"<p>{_words(rng, 24)}</p>"
        parts.append(paragraph)
        size += len(paragraph)
    parts.append(footer)
    return "\n".join(parts).encode("utf-8")


def page(spec: SyntheticWebSpec, host: str, path: str) -> bytes:
    """HTML of a page.

    Raises:
        NotFound: For unknown hosts and out-of-range paths.
    """
    index = host_index(spec, host)
    k = page_number(path)
    if k >= page_count(spec, index):
        raise NotFound(f"{host}{path}")
    return _render(spec, index, k)


def robots_txt(spec: SyntheticWebSpec) -> bytes:
    lines = ["User-agent: *"]
    lines.extend(f"Disallow: {prefix}" for prefix in spec.robots_disallow)
    if not spec.robots_disallow:
        lines.append("Disallow:")
    return ("\n".join(lines) + "\n").encode("ascii")


def request_delay_ms(spec: SyntheticWebSpec, host: str, path: str) -> int:
    if spec.delay_ms_max == 0:
        return 0
    return _rng(spec, "delay", host, path).randint(spec.delay_ms_min, spec.delay_ms_max)


def respond(spec: SyntheticWebSpec, host: str, path: str) -> SyntheticResponse:
    """What the synthetic web answers to ``GET http://host/path``.

    Errors are a deterministic function of the URL: the same URL always
    fails the same way.
    """
    host = host.lower().split(":", 1)[0]
    delay = request_delay_ms(spec, host, path)
    if path == "/robots.txt":
        try:
            host_index(spec, host)
        except NotFound:
            return SyntheticResponse(404, b"not found", "text/plain", delay)
        return SyntheticResponse(200, robots_txt(spec), "text/plain", delay)
    try:
        body = page(spec, host, path)
    except NotFound:
        return SyntheticResponse(404, b"<html><body>not found</body></html>", delay_ms=delay)
    if page_number(path) == 0:
        return SyntheticResponse(200, body, delay_ms=delay)
    roll = _unit(spec, "error", host, path)
    if roll < spec.reset_rate:
        return SyntheticResponse(200, body, delay_ms=delay, reset=True)
    roll -= spec.reset_rate
    if roll < spec.server_error_rate:
        return SyntheticResponse(503, b"<html><body>unavailable</body></html>", delay_ms=delay)
    roll -= spec.server_error_rate
    if roll < spec.malformed_rate:
        cut = body.find(b"<p>")
        broken = body[: cut if cut > 0 else len(body) // 2] + b"<a href=\"/page/<<<\"<div"
        return SyntheticResponse(200, broken, delay_ms=delay)
    return SyntheticResponse(200, body, delay_ms=delay)


def host_bfs_order(spec: SyntheticWebSpec, host: str, limit: int | None = None) -> list[str]:
    """Paths of one host in breadth-first order of first appearance.

    Follows only same-host links in document order, which is the order a
    single fetch worker crawling that host alone must reproduce.
    """
    index = host_index(spec, host)
    n = page_count(spec, index)
    seen = {0}
    order: list[str] = []
    queue = deque([0])
    while queue and (limit is None or len(order) < limit):
        k = queue.popleft()
        order.append(page_path(k))
        base = f"http://{host}{page_path(k)}"
        for href in links(spec, index, k):
            target = urlsplit(urljoin(base, href))
            if target.hostname != host:
                continue
            try:
                t = page_number(target.path)
            except NotFound:
                continue
            if t < n and t not in seen:
                seen.add(t)
                queue.append(t)
    return order


def reachable_archetypes(spec: SyntheticWebSpec) -> set[tuple[int, int]]:
    """Canonical ids of every page reachable when every host root is a seed."""
    ids: set[tuple[int, int]] = set()
    for index in range(spec.host_count):
        name = host_name(spec, index)
        for path in host_bfs_order(spec, name):
            ids.add(canonical_id(spec, name, path))
    return ids


__all__ = [
    "NotFound",
    "SyntheticResponse",
    "canonical_id",
    "host_bfs_order",
    "host_index",
    "host_name",
    "is_near_duplicate",
    "links",
    "page",
    "page_count",
    "page_number",
    "page_path",
    "reachable_archetypes",
    "respond",
    "robots_txt",
    "synthetic_ip",
    "tree_children",
]
