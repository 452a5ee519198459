"""The distributor: feeds the workbench from the virtualizer and the sieve.

Refills of visit states whose URLs are on disk always come first; new URLs
are read from the sieve only while the front (visit states in the todo
queue or being fetched) is smaller than the required front size.  The
required size grows whenever a fetch worker finds nothing to do although
the front already has the required size.
"""

from __future__ import annotations

import logging
import threading
from collections.abc import Callable

from hostwise.core.burl import CrawlUrl
from hostwise.frontier.queues import Clock, LockFreeQueue, MonotonicClock
from hostwise.frontier.sieve import MercatorSieve
from hostwise.frontier.virtualizer import VirtualQueueStore
from hostwise.frontier.workbench import Location, VisitState, Workbench

logger = logging.getLogger(__name__)

DEFAULT_URL_BYTES = 64


class FrontController:
    """Adaptive required front size and the derived per-host URL quota."""

    def __init__(
        self,
        workbench_bytes: int,
        fetch_workers: int,
        initial_factor: int = 2,
        growth_factor: float = 1.1,
        growth_floor: int = 1,
        growth_interval_ms: int = 100,
        clock: Clock | None = None,
    ) -> None:
        self.workbench_bytes = workbench_bytes
        self.required = max(1, initial_factor * fetch_workers)
        self.growth_factor = growth_factor
        self.growth_floor = growth_floor
        self.growth_interval_ms = growth_interval_ms
        self.clock = clock or MonotonicClock()
        self.waits = 0
        self.growths = 0
        self._last_growth: int | None = None
        self._url_bytes_total = 0
        self._url_count = 0
        self._lock = threading.Lock()

    @property
    def average_url_bytes(self) -> float:
        if self._url_count == 0:
            return DEFAULT_URL_BYTES
        return self._url_bytes_total / self._url_count

    def observe_url(self, size: int) -> None:
        self._url_bytes_total += size
        self._url_count += 1

    @property
    def per_host_quota(self) -> int:
        """URLs per visit state that keep a full front within the budget."""
        urls = self.workbench_bytes / self.average_url_bytes
        return max(1, int(urls / self.required))

    def note_worker_wait(self, current_front: int) -> bool:
        """Record that a fetch worker found the todo queue empty.

        The required size grows only if the front is already at least as
        large, and at most once per growth interval.  Returns whether it grew.
        """
        with self._lock:
            self.waits += 1
            if current_front < self.required:
                return False
            now = self.clock.now_ms()
            if (
                self._last_growth is not None
                and now - self._last_growth < self.growth_interval_ms
            ):
                return False
            self._last_growth = now
            self.required = max(
                self.required + self.growth_floor, int(self.required * self.growth_factor)
            )
            self.growths += 1
            logger.debug("Required front size grown to %d", self.required)
            return True

    def reset(self, required: int) -> None:
        with self._lock:
            self.required = max(1, required)


class Distributor(threading.Thread):
    """Single actor moving URLs between sieve, virtualizer and workbench."""

    def __init__(
        self,
        sieve: MercatorSieve,
        virtualizer: VirtualQueueStore,
        workbench: Workbench,
        controller: FrontController,
        front_size: Callable[[], int],
        dns_queue: LockFreeQueue[VisitState],
        requests: LockFreeQueue[tuple[str, VisitState]],
        max_urls_per_host: int = 0,
        idle_sleep: float = 0.005,
    ) -> None:
        super().__init__(name="distributor", daemon=True)
        self.sieve = sieve
        self.virtualizer = virtualizer
        self.workbench = workbench
        self.controller = controller
        self.front_size = front_size
        self.dns_queue = dns_queue
        self.requests = requests
        self.max_urls_per_host = max_urls_per_host
        self.idle_sleep = idle_sleep
        self._per_host: dict[bytes, int] = {}
        self._stop_event = threading.Event()
        # Serializes step() with control-plane reads and shutdown.
        self.lock = threading.Lock()

        self.sieve_reads = 0
        self.routed_memory = 0
        self.virtualized = 0
        self.refills = 0
        self.refilled_urls = 0
        self.purged_urls = 0
        self.dropped_over_limit = 0
        self.new_hosts = 0

    def stop(self) -> None:
        self._stop_event.set()

    def run(self) -> None:
        while not self._stop_event.is_set():
            try:
                progressed = self.step()
            except Exception:
                logger.exception("Distributor step failed")
                progressed = False
            if not progressed:
                self._stop_event.wait(self.idle_sleep)

    def step(self) -> bool:
        """Do one unit of work; return False when there was nothing to do."""
        with self.lock:
            request = self.requests.poll()
            if request is not None:
                kind, state = request
                if kind == "purge":
                    self.purge(state)
                    return True
                return self.refill(state)
            if self.front_size() < self.controller.required:
                url = self.sieve.dequeue()
                if url is not None:
                    self.sieve_reads += 1
                    self.route_url(url)
                    return True
            return False

    def refill(self, state: VisitState) -> bool:
        """Move up to one quota of the state's on-disk URLs into memory."""
        host = state.scheme_authority
        if state.purge:
            self.purge(state)
            return True
        room = self.workbench.capacity_bytes - self.workbench.used_bytes
        on_disk = self.virtualizer.count(host)
        if on_disk and room <= 0:
            self.requests.put(("refill", state))
            return False
        payloads = (
            self.virtualizer.dequeue(host, self.controller.per_host_quota, max_bytes=room)
            if on_disk
            else []
        )
        for path_query in payloads:
            state.enqueue(path_query)
        state.on_disk = self.virtualizer.count(host)
        self.workbench.restore(state)
        self.refills += 1
        self.refilled_urls += len(payloads)
        return True

    def purge(self, state: VisitState) -> None:
        host = state.scheme_authority
        remaining = self.virtualizer.count(host)
        if remaining:
            self.virtualizer.dequeue(host, remaining)
        state.on_disk = 0
        self.purged_urls += remaining + len(state)
        self.workbench.forget(state)
        logger.info("Purged host %s (%d URLs dropped)", state.host, remaining)

    def route_url(self, url: CrawlUrl) -> None:
        """Place a URL fresh out of the sieve in memory or on disk."""
        host = url.scheme_authority
        path_query = url.path_query
        if self.max_urls_per_host:
            seen = self._per_host.get(host, 0)
            if seen >= self.max_urls_per_host:
                self.dropped_over_limit += 1
                return
            self._per_host[host] = seen + 1
        self.controller.observe_url(len(path_query))

        state = self.workbench.get_state(host)
        if state is None or state.location is Location.PURGED:
            state = self.workbench.new_state(host)
            self.new_hosts += 1
            self.dns_queue.put(state)

        if (
            state.on_disk == 0
            and len(state) < self.controller.per_host_quota
            and self.workbench.has_room(len(path_query))
        ):
            self.workbench.add_url(state, path_query)
            self.routed_memory += 1
            return
        self.virtualizer.append(host, path_query)
        state.on_disk += 1
        self.virtualized += 1
        if self.workbench.unpark_for_refill(state):
            self.refill(state)

    def stats(self) -> dict[str, int | float]:
        return {
            "required_front_size": self.controller.required,
            "current_front_size": self.front_size(),
            "per_host_quota": self.controller.per_host_quota,
            "refill_backlog": self.requests.size(),
            "sieve_reads": self.sieve_reads,
            "routed_memory": self.routed_memory,
            "virtualized": self.virtualized,
            "refills": self.refills,
            "purged_urls": self.purged_urls,
            "dropped_over_limit": self.dropped_over_limit,
            "worker_waits": self.controller.waits,
        }


__all__ = ["Distributor", "FrontController"]
