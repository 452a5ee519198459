"""Tests for fetch workers against the in-process synthetic web."""

import time

import requests
from requests.adapters import BaseAdapter

from hostwise.core import burl
from hostwise.core.filters import FilterSet
from hostwise.frontier.queues import LockFreeQueue
from hostwise.frontier.workbench import VisitState
from hostwise.harness.audit import RequestTrace
from hostwise.harness.spec import SyntheticWebSpec
from hostwise.harness.synthweb import host_name, page
from hostwise.harness.transport import SyntheticAdapter, synthetic_session
from hostwise.pipeline.fetch_data import FetchData
from hostwise.pipeline.fetcher import FetchOptions, FetchWorker, build_session


class RecordingResults(LockFreeQueue):
    """Results queue that parses instantly and keeps a copy of each response."""

    def __init__(self) -> None:
        super().__init__()
        self.seen: list[tuple[str, int, bytes, bool]] = []

    def put(self, item: FetchData) -> None:
        self.seen.append((str(item.url), item.status, item.content, item.truncated))
        item.done_parsing()


class FailingAdapter(BaseAdapter):
    def send(self, request, **kwargs):
        raise requests.ConnectionError("refused", request=request)

    def close(self) -> None:
        pass


def make_worker(spec, filters=None, trace=None, session=None, **options):
    results = RecordingResults()
    session = session or synthetic_session(SyntheticAdapter(spec, trace, apply_delays=False))
    worker = FetchWorker(
        LockFreeQueue(),
        LockFreeQueue(),
        results,
        filters or FilterSet(),
        note_wait=lambda: None,
        session=session,
        options=FetchOptions(**options),
    )
    return worker, results


def make_state(spec, index: int, paths: list[str]) -> VisitState:
    state = VisitState(f"http://{host_name(spec, index)}".encode())
    for path in paths:
        state.enqueue(path.encode())
    return state


class TestVisit:
    """One acquisition of a visit state."""

    def test_robots_first_then_pages(self) -> None:
        spec = SyntheticWebSpec(host_count=2)
        trace = RequestTrace()
        worker, results = make_worker(spec, trace=trace, keepalive_max_urls=10)
        state = make_state(spec, 0, ["/", "/page/1"])

        assert worker.visit(state) == 3
        assert [e.path for e in trace.events] == ["/robots.txt", "/", "/page/1"]
        assert state.robots_loaded
        assert [s[0] for s in results.seen] == [
            f"http://{host_name(spec, 0)}/",
            f"http://{host_name(spec, 0)}/page/1",
        ]
        assert results.seen[0][2] == page(spec, host_name(spec, 0), "/")
        assert state.fetched == 2
        assert worker.pages == 2
        assert worker.robots_fetches == 1

    def test_keepalive_budget(self) -> None:
        spec = SyntheticWebSpec(host_count=1)
        worker, results = make_worker(spec, keepalive_max_urls=2)
        state = make_state(spec, 0, ["/", "/page/1", "/page/2"])
        assert worker.visit(state) == 2
        assert len(state) == 2
        assert worker.visit(state) == 2
        assert len(state) == 0
        assert worker.robots_fetches == 1

    def test_robots_disallow(self) -> None:
        spec = SyntheticWebSpec(host_count=1, robots_disallow=["/page/1"])
        worker, results = make_worker(spec, keepalive_max_urls=10)
        state = make_state(spec, 0, ["/page/1", "/page/2"])
        worker.visit(state)
        assert worker.robots_blocked == 1
        assert [s[0].rsplit("/", 1)[1] for s in results.seen] == ["2"]

    def test_fetch_filter(self) -> None:
        spec = SyntheticWebSpec(host_count=1)
        filters = FilterSet(fetch='not pathContains("/page/1")')
        worker, results = make_worker(spec, filters=filters, keepalive_max_urls=10)
        state = make_state(spec, 0, ["/page/1", "/page/2"])
        worker.visit(state)
        assert worker.filtered == 1
        assert len(results.seen) == 1

    def test_robots_404_allows_everything(self) -> None:
        spec = SyntheticWebSpec(host_count=1)
        worker, results = make_worker(spec, keepalive_max_urls=10)
        state = VisitState(b"http://unknown.test")
        state.enqueue(b"/x")
        worker.visit(state)
        assert state.robots.allowed("/x")
        assert results.seen[0][1] == 404

    def test_robots_fallback_on_error(self) -> None:
        session = requests.Session()
        session.mount("http://", FailingAdapter())
        spec = SyntheticWebSpec(host_count=1)
        worker, results = make_worker(
            spec, session=session, robots_fallback="disallow", keepalive_max_urls=10
        )
        state = make_state(spec, 0, ["/"])
        worker.visit(state)
        assert not state.robots.allowed("/")
        assert worker.robots_blocked == 1
        assert results.seen == []


class TestErrors:
    """Retries, host purges and truncation."""

    def test_transport_errors_are_retried_at_the_head(self) -> None:
        spec = SyntheticWebSpec(host_count=1, reset_rate=1.0)
        worker, results = make_worker(spec, keepalive_max_urls=10, max_retries=2)
        state = make_state(spec, 0, ["/page/1", "/page/2"])
        state.robots_loaded = True

        worker.visit(state)
        assert state.peek() == b"/page/1"
        assert state.retries == {b"/page/1": 1}
        worker.visit(state)
        assert state.retries == {b"/page/1": 2}
        worker.visit(state)
        assert state.peek() == b"/page/2"
        assert b"/page/1" not in state.retries
        assert worker.errors == 3
        assert worker.retries == 2
        assert state.consecutive_errors == 3
        assert results.seen == []

    def test_consecutive_server_errors_purge_host(self) -> None:
        spec = SyntheticWebSpec(host_count=1, server_error_rate=1.0)
        worker, results = make_worker(spec, keepalive_max_urls=10, max_host_errors=2)
        state = make_state(spec, 0, [f"/page/{k}" for k in range(1, 6)])
        state.robots_loaded = True
        worker.visit(state)
        assert state.purge
        assert [s[1] for s in results.seen] == [503, 503]

    def test_success_resets_error_streak(self) -> None:
        spec = SyntheticWebSpec(host_count=1)
        worker, _ = make_worker(spec, keepalive_max_urls=10)
        state = make_state(spec, 0, ["/"])
        state.robots_loaded = True
        state.consecutive_errors = 5
        worker.visit(state)
        assert state.consecutive_errors == 0

    def test_truncation(self) -> None:
        spec = SyntheticWebSpec(host_count=1)
        worker, results = make_worker(spec, keepalive_max_urls=10, max_body_bytes=100)
        state = make_state(spec, 0, ["/"])
        state.robots_loaded = True
        worker.visit(state)
        _, status, content, truncated = results.seen[0]
        assert status == 200
        assert truncated
        assert content == page(spec, host_name(spec, 0), "/")[:100]
        assert worker.truncated == 1


def test_worker_thread_round_trip() -> None:
    spec = SyntheticWebSpec(host_count=1)
    worker, results = make_worker(spec)
    waits = []
    worker.note_wait = lambda: waits.append(1)
    state = make_state(spec, 0, ["/"])
    worker.todo.put(state)
    worker.start()
    deadline = time.monotonic() + 5
    while worker.done.size() == 0 and time.monotonic() < deadline:
        time.sleep(0.01)
    time.sleep(0.05)
    worker.stop()
    worker.join(2)
    assert worker.done.poll() is state
    assert len(results.seen) == 1
    assert waits


def test_build_session() -> None:
    session = build_session("hostwise-test/1.0", proxy="http://127.0.0.1:9")
    assert session.headers["User-Agent"] == "hostwise-test/1.0"
    assert session.headers["Accept-Encoding"] == "identity"
    assert session.proxies["http"] == "http://127.0.0.1:9"
    assert not session.trust_env


def test_url_of_state() -> None:
    state = VisitState(b"http://a.test")
    assert state.url(b"/x") == burl.parse("http://a.test/x")
