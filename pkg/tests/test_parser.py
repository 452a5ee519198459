"""Tests for link extraction, routing and parse workers."""

import pytest

from hostwise.cluster.ring import AgentRing
from hostwise.core import burl
from hostwise.core.filters import FilterSet
from hostwise.pipeline.dedup import DuplicateFilter, UrlSeenCache
from hostwise.pipeline.fetch_data import FetchData, SpillBuffer
from hostwise.pipeline.parser import LinkRouter, ParseWorker, extract_links

HTML = "text/html; charset=utf-8"


class FakeSieve:
    def __init__(self) -> None:
        self.urls: list[str] = []

    def enqueue(self, url) -> None:
        self.urls.append(str(url))


class FakeSender:
    def __init__(self) -> None:
        self.sent: list[tuple[str, str]] = []

    def send(self, agent_id, url) -> None:
        self.sent.append((agent_id, str(url)))


class FakeStore:
    def __init__(self) -> None:
        self.records: list[tuple[str, bool]] = []

    def store(self, fd, content_digest, duplicate) -> bool:
        self.records.append((str(fd.url), duplicate))
        return True


def response(url: str, status: int = 200, body: bytes = b"", headers=None) -> FetchData:
    buffer = SpillBuffer()
    buffer.append(body)
    return FetchData(
        url=burl.parse(url),
        body=buffer,
        status=status,
        headers=headers if headers is not None else [("Content-Type", HTML)],
    )


def make_worker(filters=None, store=None, **router_args):
    filters = filters or FilterSet()
    sieve = FakeSieve()
    router = LinkRouter(sieve, UrlSeenCache(1024), filters, **router_args)
    worker = ParseWorker(None, router, filters, DuplicateFilter(1000, 1e-6), store=store)
    return worker, router, sieve


class TestExtractLinks:
    def test_document_order_and_tags(self) -> None:
        html = (
            b'<html><head><base href="http://b.test/dir/"></head><body>'
            b'<a href="one">1</a><a name="anchor">x</a>'
            b'<map><area href="/two"></map>'
            b'<iframe src="three.html"></iframe>'
            b"<img src=\"not-a-link.png\"><a href='four'>4</a></body></html>"
        )
        base, links = extract_links(html, HTML)
        assert base == "http://b.test/dir/"
        assert links == ["one", "/two", "three.html", "four"]

    def test_no_base(self) -> None:
        assert extract_links(b"<p>nothing</p>", None) == (None, [])

    def test_broken_markup(self) -> None:
        _, links = extract_links(b'<a href="/ok">ok</a><a href="/page/<<<"<div', HTML)
        assert links[0] == "/ok"


class TestLinkRouter:
    """Test suite for LinkRouter."""

    def test_cache_absorbs_repeats(self) -> None:
        sieve = FakeSieve()
        router = LinkRouter(sieve, UrlSeenCache(16), FilterSet())
        url = burl.parse("http://a.test/x")
        assert router.route(url)
        assert not router.route(url)
        assert sieve.urls == ["http://a.test/x"]
        assert (router.discovered, router.cached, router.scheduled) == (2, 1, 1)
        assert router.cache_absorption == 0.5

    def test_schedule_filter(self) -> None:
        sieve = FakeSieve()
        router = LinkRouter(sieve, UrlSeenCache(16), FilterSet(schedule="hostEndsWith(.org)"))
        router.route(burl.parse("http://a.test/"))
        router.route(burl.parse("http://a.org/"))
        assert sieve.urls == ["http://a.org/"]
        assert router.unscheduled == 1

    def test_foreign_hosts_are_sent_to_their_owner(self) -> None:
        ring = AgentRing(["a", "b", "c"])
        sender = FakeSender()
        sieve = FakeSieve()
        router = LinkRouter(sieve, UrlSeenCache(4096), FilterSet(), ring, "a", sender)
        hosts = [f"h{i}.test" for i in range(60)]
        for host in hosts:
            router.route(burl.parse(f"http://{host}/"))

        local = [h for h in hosts if ring.assign(h.encode()) == "a"]
        assert sieve.urls == [f"http://{h}/" for h in local]
        assert len(sender.sent) == len(hosts) - len(local) == router.sent
        for agent, url in sender.sent:
            assert agent == ring.assign(burl.parse(url).host.encode())

    def test_receive(self) -> None:
        sieve = FakeSieve()
        router = LinkRouter(sieve, UrlSeenCache(16), FilterSet())
        url = burl.parse("http://a.test/x")
        router.receive(url)
        router.receive(url)
        assert sieve.urls == ["http://a.test/x"]
        assert router.cached == 1


class TestParseWorker:
    """Test suite for ParseWorker."""

    def test_html_links_are_resolved_and_routed(self) -> None:
        worker, _, sieve = make_worker()
        fd = response(
            "http://a.test/dir/page",
            body=b'<a href="x">x</a><a href="/y">y</a><a href="http://b.test">b</a>',
        )
        worker.process(fd)
        assert sieve.urls == ["http://a.test/dir/x", "http://a.test/y", "http://b.test/"]
        assert worker.links == 3
        assert fd.parsed.is_set()
        assert fd.digest is not None
        assert worker.archetypes == 1

    def test_base_href(self) -> None:
        worker, _, sieve = make_worker()
        worker.process(
            response(
                "http://a.test/",
                body=b'<head><base href="/sub/"></head><a href="z">z</a>',
            )
        )
        assert sieve.urls == ["http://a.test/sub/z"]

    def test_redirect_location(self) -> None:
        worker, _, sieve = make_worker()
        fd = response("http://a.test/old", 301, headers=[("Location", "/new")])
        worker.process(fd)
        assert sieve.urls == ["http://a.test/new"]

    def test_non_html_is_not_parsed(self) -> None:
        worker, _, sieve = make_worker()
        plain = [("Content-Type", "text/plain")]
        worker.process(response("http://a.test/f.txt", body=b'<a href="/x">', headers=plain))
        worker.process(response("http://a.test/gone", 404, body=b'<a href="/y">'))
        assert sieve.urls == []
        assert worker.parsed == 2

    def test_bad_links_are_counted(self) -> None:
        worker, _, sieve = make_worker()
        worker.process(
            response("http://a.test/", body=b'<a href="mailto:x@a.test">m</a><a href="/ok">o</a>')
        )
        assert worker.bad_links == 1
        assert sieve.urls == ["http://a.test/ok"]

    def test_follow_and_parse_filters(self) -> None:
        worker, _, sieve = make_worker(FilterSet(follow='not pathContains("/private")'))
        worker.process(
            response("http://a.test/", body=b'<a href="/private/1">p</a><a href="/public">q</a>')
        )
        assert sieve.urls == ["http://a.test/public"]

        worker, _, sieve = make_worker(FilterSet(parse="statusClass(5xx)"))
        worker.process(response("http://a.test/", body=b'<a href="/x">x</a>'))
        assert sieve.urls == []

    def test_duplicates_and_store_filter(self) -> None:
        store = FakeStore()
        worker, _, _ = make_worker(FilterSet(store="statusClass(2xx)"), store=store)
        body = b"<p>Visitors: 12</p>"
        worker.process(response("http://a.test/1", body=body))
        worker.process(response("http://a.test/2", body=b"<p>Visitors: 98765</p>"))
        worker.process(response("http://a.test/3", 404, body=b"missing"))
        assert store.records == [("http://a.test/1", False), ("http://a.test/2", True)]
        assert (worker.archetypes, worker.duplicate_pages, worker.stored) == (2, 1, 2)

    def test_buffer_released_on_failure(self, monkeypatch) -> None:
        worker, _, _ = make_worker()

        def explode(fd):
            raise RuntimeError("boom")

        monkeypatch.setattr(worker, "follow_links", explode)
        fd = response("http://a.test/")
        worker.process(fd)
        assert fd.parsed.is_set()


@pytest.mark.parametrize(
    "raw", ["<a href='/x'>", "<A HREF='/x'>", "<iframe src='/x'></iframe>", "<a href = \"/x\">"]
)
def test_link_spellings(raw) -> None:
    assert extract_links(raw.encode(), HTML)[1] == ["/x"]
