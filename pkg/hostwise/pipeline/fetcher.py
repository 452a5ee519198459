"""Fetch workers.

A fetch worker only touches lock-free queues: it polls a visit state from
the todo queue, fetches up to a keepalive budget of its URLs (robots.txt
first if the host's rules are unknown), hands each response to the parse
workers through the results queue, waits until the response has been
parsed, and finally pushes the visit state to the done queue.
"""

from __future__ import annotations

import logging
import threading
from collections.abc import Callable

import requests

from hostwise.core.burl import CrawlUrl
from hostwise.core.filters import FilterSet
from hostwise.frontier.queues import Clock, ExponentialBackoff, LockFreeQueue, MonotonicClock
from hostwise.frontier.workbench import VisitState
from hostwise.pipeline.fetch_data import FetchData, SpillBuffer
from hostwise.pipeline.robots import ROBOTS_PATH, RobotsRules, robots_allowed

logger = logging.getLogger(__name__)

CHUNK_SIZE = 16 * 1024
ROBOTS_MAX_BYTES = 500 * 1024
PARSE_WAIT = 0.1
# Headers that no longer describe the payload once requests has decoded it.
_DECODED_HEADERS = ("content-encoding", "content-length")


class FetchOptions:
    """Per-worker fetch settings; mutable so the control plane can tune them."""

    def __init__(
        self,
        user_agent: str = "hostwise/0.1",
        timeout_s: float = 30.0,
        keepalive_ms: int = 3000,
        keepalive_max_urls: int = 4,
        max_body_bytes: int = 8 * 2**20,
        memory_window_bytes: int = 64 * 2**10,
        robots_fallback: str = "allow",
        max_retries: int = 2,
        max_host_errors: int = 10,
        backoff_initial_ms: int = 1,
        backoff_max_ms: int = 256,
    ) -> None:
        self.user_agent = user_agent
        self.timeout_s = timeout_s
        self.keepalive_ms = keepalive_ms
        self.keepalive_max_urls = keepalive_max_urls
        self.max_body_bytes = max_body_bytes
        self.memory_window_bytes = memory_window_bytes
        self.robots_fallback = robots_fallback
        self.max_retries = max_retries
        self.max_host_errors = max_host_errors
        self.backoff_initial_ms = backoff_initial_ms
        self.backoff_max_ms = backoff_max_ms

    @classmethod
    def from_config(cls, fetch) -> "FetchOptions":
        return cls(
            user_agent=fetch.user_agent,
            timeout_s=fetch.timeout_s,
            keepalive_ms=fetch.keepalive_ms,
            keepalive_max_urls=fetch.keepalive_max_urls,
            max_body_bytes=int(fetch.max_body_bytes),
            memory_window_bytes=int(fetch.memory_window_bytes),
            robots_fallback=fetch.robots_fallback,
            max_retries=fetch.max_retries,
            max_host_errors=fetch.max_host_errors,
            backoff_initial_ms=fetch.backoff_initial_ms,
            backoff_max_ms=fetch.backoff_max_ms,
        )


def build_session(user_agent: str, proxy: str | None = None) -> requests.Session:
    session = requests.Session()
    session.headers.update({"User-Agent": user_agent, "Accept-Encoding": "identity"})
    if proxy:
        session.proxies.update({"http": proxy, "https": proxy})
    session.trust_env = False
    return session


class FetchWorker(threading.Thread):
    """Blocking HTTP fetcher bound to one session and one reusable buffer."""

    def __init__(
        self,
        todo: LockFreeQueue[VisitState],
        done: LockFreeQueue[VisitState],
        results: LockFreeQueue[FetchData],
        filters: FilterSet,
        note_wait: Callable[[], object],
        session: requests.Session,
        options: FetchOptions | None = None,
        clock: Clock | None = None,
        name: str = "fetch",
    ) -> None:
        super().__init__(name=name, daemon=True)
        self.todo = todo
        self.done = done
        self.results = results
        self.filters = filters
        self.note_wait = note_wait
        self.session = session
        self.options = options or FetchOptions()
        self.clock = clock or MonotonicClock()
        self.backoff = ExponentialBackoff(
            self.options.backoff_initial_ms / 1000, self.options.backoff_max_ms / 1000
        )
        self.data = FetchData(
            url=CrawlUrl(b"http://localhost", b"/"),
            body=SpillBuffer(self.options.memory_window_bytes),
        )
        self._stop_event = threading.Event()

        self.pages = 0
        self.bytes = 0
        self.errors = 0
        self.retries = 0
        self.robots_fetches = 0
        self.robots_blocked = 0
        self.filtered = 0
        self.truncated = 0
        self.waits = 0
        self.visits = 0

    def stop(self) -> None:
        self._stop_event.set()

    def run(self) -> None:
        try:
            while not self._stop_event.is_set():
                state = self.todo.poll()
                if state is None:
                    self.waits += 1
                    self.note_wait()
                    self.backoff.wait(self._stop_event.wait)
                    continue
                self.backoff.reset()
                try:
                    self.visit(state)
                except Exception as e:
                    logger.exception("Fetch worker failed visiting %s", state.host)
                    state.last_error = str(e)
                    state.fetch_end = self.clock.now_ms()
                self.done.put(state)
        finally:
            self.data.body.close()
            self.session.close()

    # -- one acquisition --------------------------------------------------

    def visit(self, state: VisitState) -> int:
        """Fetch from one visit state within the keepalive budget.

        Returns the number of requests made.  ``state.fetch_end`` is set to
        the end of the last request, which is what politeness delays count
        from.
        """
        self.visits += 1
        start = self.clock.now_ms()
        state.fetch_end = start
        made = 0
        while not self._stop_event.is_set():
            if not state.robots_loaded:
                self.fetch_robots(state)
                made += 1
            else:
                path_query = state.pop()
                if path_query is None:
                    break
                url = state.url(path_query)
                if not robots_allowed(state.robots, path_query):
                    self.robots_blocked += 1
                    continue
                if not self.filters.fetch(url):
                    self.filtered += 1
                    continue
                made += 1
                if not self.fetch_page(state, url):
                    break
            if state.purge or made >= self.options.keepalive_max_urls:
                break
            if self.clock.now_ms() - start >= self.options.keepalive_ms:
                break
        return made

    def fetch_robots(self, state: VisitState) -> None:
        fd = self.data
        fd.reset(state.url(ROBOTS_PATH))
        fd.is_robots = True
        fd.state = state
        self.robots_fetches += 1
        self.get(fd, ROBOTS_MAX_BYTES)
        state.fetch_end = fd.fetch_end
        state.robots_loaded = True
        if fd.error is None and 200 <= fd.status < 300:
            state.robots = RobotsRules.parse(fd.content, self.options.user_agent)
        elif fd.error is None and 400 <= fd.status < 500:
            state.robots = RobotsRules.allow_all()
        elif self.options.robots_fallback == "disallow":
            state.robots = RobotsRules.disallow_all()
        else:
            state.robots = RobotsRules.allow_all()
        logger.debug(
            "robots.txt of %s: status=%s error=%s rules=%d",
            state.host,
            fd.status,
            fd.error,
            len(state.robots.rules),
        )

    def fetch_page(self, state: VisitState, url: CrawlUrl) -> bool:
        """Fetch one URL and hand it to parsing; False ends the acquisition."""
        fd = self.data
        fd.reset(url)
        fd.state = state
        self.get(fd, self.options.max_body_bytes)
        state.fetch_end = fd.fetch_end

        if fd.error is not None:
            self.errors += 1
            state.last_error = fd.error
            state.consecutive_errors += 1
            attempts = state.retries.get(url.path_query, 0) + 1
            if attempts <= self.options.max_retries:
                state.retries[url.path_query] = attempts
                state.enqueue_front(url.path_query)
                self.retries += 1
            else:
                state.retries.pop(url.path_query, None)
                logger.info("Giving up on %s after %d attempts: %s", url, attempts, fd.error)
            self._check_host_errors(state)
            return False

        state.retries.pop(url.path_query, None)
        if fd.status >= 500:
            state.consecutive_errors += 1
            self._check_host_errors(state)
        else:
            state.consecutive_errors = 0
        state.fetched += 1
        self.pages += 1
        self.bytes += fd.body.size
        if fd.truncated:
            self.truncated += 1

        self.results.put(fd)
        while not fd.parsed.wait(PARSE_WAIT):
            if self._stop_event.is_set():
                return False
        return True

    def _check_host_errors(self, state: VisitState) -> None:
        if state.consecutive_errors >= self.options.max_host_errors and not state.purge:
            state.purge = True
            logger.warning(
                "Purging %s after %d consecutive errors (last: %s)",
                state.host,
                state.consecutive_errors,
                state.last_error,
            )

    def get(self, fd: FetchData, max_bytes: int) -> None:
        """Perform the GET; errors end up in ``fd.error``, never raised."""
        fd.fetch_start = self.clock.now_ms()
        try:
            with self.session.get(
                str(fd.url),
                timeout=self.options.timeout_s,
                allow_redirects=False,
                stream=True,
            ) as response:
                fd.status = response.status_code
                headers = [
                    (k, v) for k, v in response.headers.items() if k.lower() != "transfer-encoding"
                ]
                encoded = response.headers.get("content-encoding", "identity").lower()
                if encoded != "identity":
                    headers = [(k, v) for k, v in headers if k.lower() not in _DECODED_HEADERS]
                fd.headers = headers
                for chunk in response.iter_content(CHUNK_SIZE):
                    room = max_bytes - fd.body.size
                    if len(chunk) > room:
                        fd.body.append(chunk[:room])
                        fd.truncated = True
                        break
                    fd.body.append(chunk)
        except requests.RequestException as e:
            fd.error = f"{type(e).__name__}: {e}"
        except OSError as e:
            fd.error = f"{type(e).__name__}: {e}"
        finally:
            fd.fetch_end = self.clock.now_ms()


__all__ = ["FetchOptions", "FetchWorker", "build_session"]
