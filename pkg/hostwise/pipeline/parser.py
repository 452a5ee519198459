"""Parse workers and link routing.

A parse worker takes fetched responses from the results queue, extracts
their links, routes every new link to the local sieve or to the agent that
owns its host, digests the content, checks it against the duplicate
filter, stores it, and finally signals the fetch worker that the buffer is
free again.
"""

from __future__ import annotations

import logging
import threading
from typing import TYPE_CHECKING, Protocol

from bs4 import BeautifulSoup

from hostwise.core import burl
from hostwise.core.burl import CrawlUrl, UrlError
from hostwise.core.filters import FilterSet
from hostwise.frontier.queues import ExponentialBackoff, LockFreeQueue
from hostwise.frontier.sieve import MercatorSieve
from hostwise.pipeline.dedup import DuplicateFilter, UrlSeenCache
from hostwise.pipeline.digest import charset_of, digest, is_html
from hostwise.pipeline.fetch_data import FetchData
from hostwise.store.warc import StoreFailed

if TYPE_CHECKING:
    from hostwise.cluster.ring import AgentRing
    from hostwise.store.warc import WarcStore

logger = logging.getLogger(__name__)

LINK_ATTRIBUTES = {"a": "href", "area": "href", "frame": "src", "iframe": "src"}


class UrlSender(Protocol):
    def send(self, agent_id: str, url: CrawlUrl) -> None: ...


def extract_links(content: bytes, content_type: str | None) -> tuple[str | None, list[str]]:
    """Return the document's ``<base href>`` (if any) and its link targets in order."""
    soup = BeautifulSoup(content, "lxml", from_encoding=charset_of(content_type))
    base_tag = soup.find("base", href=True)
    base = base_tag["href"] if base_tag is not None else None
    links = [
        tag[LINK_ATTRIBUTES[tag.name]]
        for tag in soup.find_all(list(LINK_ATTRIBUTES))
        if tag.has_attr(LINK_ATTRIBUTES[tag.name])
    ]
    return base, links


class LinkRouter:
    """Sends newly discovered URLs to the sieve or to the agent owning the host.

    The URL-seen cache is probed first, so a URL found again and again is
    neither enqueued nor retransmitted.
    """

    def __init__(
        self,
        sieve: MercatorSieve,
        cache: UrlSeenCache,
        filters: FilterSet,
        ring: "AgentRing | None" = None,
        local_id: str | None = None,
        sender: UrlSender | None = None,
    ) -> None:
        self.sieve = sieve
        self.cache = cache
        self.filters = filters
        self.ring = ring
        self.local_id = local_id
        self.sender = sender
        self._lock = threading.Lock()
        self.discovered = 0
        self.cached = 0
        self.unscheduled = 0
        self.scheduled = 0
        self.sent = 0

    def _count(self, name: str) -> None:
        with self._lock:
            setattr(self, name, getattr(self, name) + 1)

    def route(self, url: CrawlUrl) -> bool:
        """Route a discovered URL; return True if it went past the cache."""
        self._count("discovered")
        if self.cache.check_and_add(burl.hash128(url)):
            self._count("cached")
            return False
        if self.ring is not None and self.sender is not None:
            owner = self.ring.assign(url.host.encode("ascii"))
            if owner != self.local_id:
                self.sender.send(owner, url)
                self._count("sent")
                return True
        self.schedule(url)
        return True

    def receive(self, url: CrawlUrl) -> None:
        """Accept a URL sent by another agent."""
        if self.cache.check_and_add(burl.hash128(url)):
            self._count("cached")
            return
        self.schedule(url)

    def schedule(self, url: CrawlUrl) -> None:
        if not self.filters.schedule(url):
            self._count("unscheduled")
            return
        self.sieve.enqueue(url)
        self._count("scheduled")

    @property
    def cache_absorption(self) -> float:
        """Share of discovered URL occurrences stopped by the cache."""
        return self.cached / self.discovered if self.discovered else 0.0


class ParseWorker(threading.Thread):
    def __init__(
        self,
        results: LockFreeQueue[FetchData],
        router: LinkRouter,
        filters: FilterSet,
        duplicates: DuplicateFilter,
        store: "WarcStore | None" = None,
        store_unparsed: bool = True,
        name: str = "parse",
    ) -> None:
        super().__init__(name=name, daemon=True)
        self.results = results
        self.router = router
        self.filters = filters
        self.duplicates = duplicates
        self.store = store
        self.store_unparsed = store_unparsed
        self.backoff = ExponentialBackoff(0.001, 0.05)
        self._stop_event = threading.Event()

        self.parsed = 0
        self.links = 0
        self.bad_links = 0
        self.parse_failures = 0
        self.stored = 0
        self.archetypes = 0
        self.duplicate_pages = 0

    def stop(self) -> None:
        self._stop_event.set()

    def run(self) -> None:
        while not self._stop_event.is_set():
            fd = self.results.poll()
            if fd is None:
                self.backoff.wait(self._stop_event.wait)
                continue
            self.backoff.reset()
            self.process(fd)

    def process(self, fd: FetchData) -> None:
        """Handle one response; always releases the fetch worker's buffer."""
        try:
            parsed = self.follow_links(fd)
            fd.digest = digest(fd.content, fd.content_type)
            fd.is_duplicate = self.duplicates.check_and_add(fd.digest)
            if fd.is_duplicate:
                self.duplicate_pages += 1
            else:
                self.archetypes += 1
            if self.store is not None and (parsed or self.store_unparsed):
                if self.filters.store(fd):
                    if self.store.store(fd, fd.digest, fd.is_duplicate):
                        self.stored += 1
        except StoreFailed as e:
            logger.debug("Not storing %s: %s", fd.url, e)
        except Exception:
            logger.exception("Parse worker failed on %s", fd.url)
        finally:
            fd.done_parsing()

    def follow_links(self, fd: FetchData) -> bool:
        """Extract and route the response's links; False if parsing failed."""
        self.parsed += 1
        if not self.filters.parse(fd):
            return True
        base = fd.url
        if 300 <= fd.status < 400:
            location = fd.header("location")
            raw_links = [location] if location else []
        elif 200 <= fd.status < 300 and is_html(fd.content_type):
            try:
                base_href, raw_links = extract_links(fd.content, fd.content_type)
            except Exception as e:
                self.parse_failures += 1
                logger.debug("Could not parse %s: %s", fd.url, e)
                return False
            if base_href:
                try:
                    base = burl.parse(base_href, fd.url)
                except UrlError:
                    pass
        else:
            return True
        for raw in raw_links:
            self.links += 1
            try:
                url = burl.parse(raw, base)
            except UrlError:
                self.bad_links += 1
                continue
            if self.filters.follow(url):
                self.router.route(url)
        return True


__all__ = ["LinkRouter", "ParseWorker", "UrlSender", "extract_links"]
