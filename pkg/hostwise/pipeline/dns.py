"""DNS workers: resolve newly discovered hosts and hand them to the workbench."""

from __future__ import annotations

import heapq
import logging
import socket
import threading
from collections.abc import Callable
from typing import Protocol

from hostwise.frontier.queues import Clock, ExponentialBackoff, LockFreeQueue, MonotonicClock
from hostwise.frontier.workbench import Location, VisitState, Workbench
from hostwise.harness.spec import SyntheticWebSpec
from hostwise.harness.synthweb import synthetic_ip

logger = logging.getLogger(__name__)


class ResolutionFailure(OSError):
    """A host name could not be resolved."""


class Resolver(Protocol):
    def __call__(self, host: str) -> str: ...


def system_resolver(host: str) -> str:
    """First address returned by the system resolver.

    Raises:
        ResolutionFailure: If the lookup fails or returns nothing.
    """
    try:
        infos = socket.getaddrinfo(host, None, type=socket.SOCK_STREAM)
    except (socket.gaierror, UnicodeError) as e:
        raise ResolutionFailure(f"{host}: {e}") from e
    if not infos:
        raise ResolutionFailure(f"{host}: no address")
    return infos[0][4][0]


def synthetic_resolver(spec: SyntheticWebSpec) -> Resolver:
    """Resolver mapping synthetic host names onto their fake addresses."""

    def resolve(host: str) -> str:
        return synthetic_ip(spec, host)

    return resolve


class DnsWorker(threading.Thread):
    """Resolves visit states from the DNS queue and adds them to the workbench.

    Failed lookups are retried after ``retry_delay_ms`` doubling per attempt;
    after ``max_attempts`` the host is handed to the distributor for purging.
    """

    def __init__(
        self,
        workbench: Workbench,
        queue: LockFreeQueue[VisitState],
        requests: LockFreeQueue[tuple[str, VisitState]],
        resolver: Resolver = system_resolver,
        max_attempts: int = 3,
        retry_delay_ms: int = 1000,
        clock: Clock | None = None,
        on_resolved: Callable[[VisitState, str], None] | None = None,
        name: str = "dns",
    ) -> None:
        super().__init__(name=name, daemon=True)
        self.workbench = workbench
        self.queue = queue
        self.requests = requests
        self.resolver = resolver
        self.max_attempts = max_attempts
        self.retry_delay_ms = retry_delay_ms
        self.clock = clock or MonotonicClock()
        self.on_resolved = on_resolved
        self.backoff = ExponentialBackoff(0.001, 0.1)
        self._retries: list[tuple[int, int, VisitState]] = []
        self._attempts: dict[bytes, int] = {}
        self._tiebreak = 0
        self._stop_event = threading.Event()

        self.resolved = 0
        self.failures = 0
        self.discarded = 0

    def stop(self) -> None:
        self._stop_event.set()

    def _next_item(self) -> VisitState | None:
        if self._retries and self._retries[0][0] <= self.clock.now_ms():
            return heapq.heappop(self._retries)[2]
        return self.queue.poll()

    def resolve_one(self, state: VisitState) -> bool:
        """Resolve a state and place it; return False if it was rescheduled or dropped."""
        if state.location is Location.PURGED:
            return False
        host = state.host
        try:
            ip = self.resolver(host)
        except (ResolutionFailure, OSError) as e:
            self.failures += 1
            state.last_error = str(e)
            attempts = self._attempts.get(state.scheme_authority, 0) + 1
            self._attempts[state.scheme_authority] = attempts
            if attempts >= self.max_attempts:
                self._attempts.pop(state.scheme_authority, None)
                self.discarded += 1
                state.purge = True
                self.requests.put(("purge", state))
                logger.warning("Giving up on %s after %d lookups: %s", host, attempts, e)
                return False
            due = self.clock.now_ms() + self.retry_delay_ms * 2 ** (attempts - 1)
            self._tiebreak += 1
            heapq.heappush(self._retries, (due, self._tiebreak, state))
            logger.debug("Lookup of %s failed (attempt %d): %s", host, attempts, e)
            return False
        self._attempts.pop(state.scheme_authority, None)
        self.resolved += 1
        location = self.workbench.add(state, ip)
        if location is Location.REFILL:
            self.requests.put(("refill", state))
        if self.on_resolved is not None:
            self.on_resolved(state, ip)
        return True

    def run(self) -> None:
        while not self._stop_event.is_set():
            state = self._next_item()
            if state is None:
                self.backoff.wait(self._stop_event.wait)
                continue
            self.backoff.reset()
            try:
                self.resolve_one(state)
            except Exception:
                logger.exception("DNS worker failed on %s", state.host)

    @property
    def pending_retries(self) -> int:
        return len(self._retries)


__all__ = [
    "DnsWorker",
    "ResolutionFailure",
    "Resolver",
    "synthetic_resolver",
    "system_resolver",
]
