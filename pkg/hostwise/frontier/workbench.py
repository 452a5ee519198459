"""The workbench: a delay queue of IP-grouped per-host visit states.

The workbench is a priority queue of :class:`WorkbenchEntry` (one per IP
address), each holding a priority queue of :class:`VisitState` (one per
host), each holding a FIFO of path+query byte strings.  The priority of an
entry is the later of its IP next-fetch instant and the next-fetch instant
of its top visit state, so a host can be visited without breaking host or
IP politeness iff the top entry's priority is not in the future.

A visit state is a token: at any time it is in exactly one place (waiting
for DNS, inside an entry, in the todo queue, with a fetch worker, in the
done queue, waiting for a refill, or parked).  Acquiring a state also
detaches its entry, so no other host on the same IP can be fetched until
the state is released.
"""

from __future__ import annotations

import enum
import heapq
import logging
import threading
from collections import deque
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Any, Protocol

from hostwise.core.burl import CrawlUrl
from hostwise.frontier.queues import Clock, ExponentialBackoff, LockFreeQueue, MonotonicClock

if TYPE_CHECKING:
    from hostwise.pipeline.robots import RobotsRules

logger = logging.getLogger(__name__)


class WorkbenchEmpty(LookupError):
    """No schedulable visit state is present."""


class NotReady(RuntimeError):
    """The top visit state cannot be fetched yet."""


class BudgetExceeded(RuntimeError):
    """Adding the URL would exceed the workbench byte budget."""


class Location(enum.Enum):
    NEW = "new"  # waiting for DNS
    ENTRY = "entry"
    ACQUIRED = "acquired"  # todo queue, fetch worker or done queue
    REFILL = "refill"
    PARKED = "parked"
    PURGED = "purged"


@dataclass(eq=False)
class VisitState:
    """Per-host crawl state and scheduling token."""

    scheme_authority: bytes
    fifo: deque[bytes] = field(default_factory=deque)
    next_fetch: int = 0
    on_disk: int = 0
    fifo_bytes: int = 0
    accounted_bytes: int = 0
    location: Location = Location.NEW
    entry: "WorkbenchEntry | None" = None
    robots: "RobotsRules | None" = None
    robots_loaded: bool = False
    last_error: str | None = None
    consecutive_errors: int = 0
    retries: dict[bytes, int] = field(default_factory=dict)
    fetched: int = 0
    purge: bool = False
    fetch_end: int = 0
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    @property
    def host(self) -> str:
        return CrawlUrl(self.scheme_authority, b"/").host

    def enqueue(self, path_query: bytes) -> None:
        with self._lock:
            self.fifo.append(path_query)
            self.fifo_bytes += len(path_query)

    def enqueue_front(self, path_query: bytes) -> None:
        with self._lock:
            self.fifo.appendleft(path_query)
            self.fifo_bytes += len(path_query)

    def pop(self) -> bytes | None:
        with self._lock:
            if not self.fifo:
                return None
            path_query = self.fifo.popleft()
            self.fifo_bytes -= len(path_query)
            return path_query

    def peek(self) -> bytes | None:
        with self._lock:
            return self.fifo[0] if self.fifo else None

    def clear(self) -> int:
        with self._lock:
            dropped = len(self.fifo)
            self.fifo.clear()
            self.fifo_bytes = 0
            return dropped

    def __len__(self) -> int:
        return len(self.fifo)

    def url(self, path_query: bytes) -> CrawlUrl:
        return CrawlUrl(self.scheme_authority, path_query)


@dataclass(eq=False)
class WorkbenchEntry:
    """All visit states resolving to one IP address."""

    ip: str
    next_fetch: int = 0
    states: list[tuple[int, bytes, VisitState]] = field(default_factory=list)
    acquired: bool = False
    version: int = 0

    def push(self, state: VisitState) -> None:
        heapq.heappush(self.states, (state.next_fetch, state.scheme_authority, state))

    def pop(self) -> VisitState:
        return heapq.heappop(self.states)[2]

    def top(self) -> VisitState | None:
        return self.states[0][2] if self.states else None

    def priority(self) -> int:
        top = self.states[0][0] if self.states else 0
        return max(self.next_fetch, top)


class DelayPolicy(Protocol):
    def host_delay(self, state: VisitState) -> int: ...

    def ip_delay(self, entry: WorkbenchEntry) -> int: ...


class ConstantDelays:
    """Host and IP delays from configuration with per-host overrides.

    A robots.txt crawl-delay raises the host delay up to ``max_crawl_delay``.
    """

    def __init__(
        self,
        host_delay_ms: int,
        ip_delay_ms: int,
        overrides: dict[str, int] | None = None,
        respect_crawl_delay: bool = True,
        max_crawl_delay_ms: int = 60_000,
    ) -> None:
        self.host_delay_ms = host_delay_ms
        self.ip_delay_ms = ip_delay_ms
        self.overrides = dict(overrides or {})
        self.respect_crawl_delay = respect_crawl_delay
        self.max_crawl_delay_ms = max_crawl_delay_ms

    def host_delay(self, state: VisitState) -> int:
        delay = self.overrides.get(state.host, self.host_delay_ms)
        if self.respect_crawl_delay and state.robots is not None:
            crawl_delay = state.robots.crawl_delay_ms
            if crawl_delay is not None:
                delay = max(delay, min(crawl_delay, self.max_crawl_delay_ms))
        return delay

    def ip_delay(self, entry: WorkbenchEntry) -> int:
        return self.ip_delay_ms


class Workbench:
    """Politeness-respecting scheduler over IP entries and host visit states."""

    def __init__(self, capacity_bytes: int) -> None:
        self.capacity_bytes = capacity_bytes
        self.used_bytes = 0
        self.states: dict[bytes, VisitState] = {}
        self.entries: dict[str, WorkbenchEntry] = {}
        self.parked: dict[bytes, VisitState] = {}
        self._heap: list[tuple[int, bytes, int, str]] = []
        self._lock = threading.RLock()
        self.changed = threading.Condition(self._lock)

    # -- heap maintenance -------------------------------------------------

    def _reschedule(self, entry: WorkbenchEntry) -> None:
        entry.version += 1
        if entry.acquired or not entry.states:
            return
        top = entry.top()
        heapq.heappush(
            self._heap, (entry.priority(), top.scheme_authority, entry.version, entry.ip)
        )
        self.changed.notify_all()

    def _top(self) -> WorkbenchEntry | None:
        while self._heap:
            _, _, version, ip = self._heap[0]
            entry = self.entries[ip]
            if entry.version == version and not entry.acquired and entry.states:
                return entry
            heapq.heappop(self._heap)
        return None

    # -- scheduling -------------------------------------------------------

    def peek_delay(self, now: int) -> int:
        """Milliseconds until some host may be fetched (0 if one may now).

        Raises:
            WorkbenchEmpty: If no entry holds a schedulable visit state.
        """
        with self._lock:
            entry = self._top()
            if entry is None:
                raise WorkbenchEmpty("workbench is empty")
            return max(0, entry.priority() - now)

    def acquire(self, now: int) -> tuple[WorkbenchEntry, VisitState]:
        """Detach the top entry and its top visit state.

        Raises:
            WorkbenchEmpty: If nothing is schedulable.
            NotReady: If the top entry's priority is in the future.
        """
        with self._lock:
            entry = self._top()
            if entry is None:
                raise WorkbenchEmpty("workbench is empty")
            if entry.priority() > now:
                raise NotReady(f"next host ready in {entry.priority() - now} ms")
            heapq.heappop(self._heap)
            state = entry.pop()
            entry.acquired = True
            entry.version += 1
            state.location = Location.ACQUIRED
            return entry, state

    def release(
        self,
        entry: WorkbenchEntry,
        state: VisitState,
        fetch_end: int,
        host_delay: int,
        ip_delay: int,
    ) -> Location:
        """Return a fetched visit state and its entry to the workbench.

        Returns where the state went: back into its entry, parked (nothing
        left anywhere), waiting for a refill from disk, or purged.
        """
        with self._lock:
            state.next_fetch = fetch_end + host_delay
            entry.next_fetch = max(entry.next_fetch, fetch_end + ip_delay)
            entry.acquired = False
            self._reconcile(state)
            if state.purge:
                location = self._purge_locked(state)
            else:
                location = self._place(entry, state)
            self._reschedule(entry)
            return location

    def _place(self, entry: WorkbenchEntry, state: VisitState) -> Location:
        if state.fifo:
            state.location = Location.ENTRY
            entry.push(state)
        elif state.on_disk > 0:
            state.location = Location.REFILL
        else:
            state.location = Location.PARKED
            self.parked[state.scheme_authority] = state
        return state.location

    def _reconcile(self, state: VisitState) -> None:
        self.used_bytes += state.fifo_bytes - state.accounted_bytes
        state.accounted_bytes = state.fifo_bytes

    def _purge_locked(self, state: VisitState) -> Location:
        state.clear()
        self._reconcile(state)
        state.location = Location.PURGED
        self.parked.pop(state.scheme_authority, None)
        return Location.PURGED

    def forget(self, state: VisitState) -> None:
        """Drop a purged or unresolvable state so a later URL starts afresh."""
        with self._lock:
            state.clear()
            self._reconcile(state)
            state.location = Location.PURGED
            self.parked.pop(state.scheme_authority, None)
            self.states.pop(state.scheme_authority, None)

    # -- population -------------------------------------------------------

    def new_state(self, scheme_authority: bytes) -> VisitState:
        """Create the visit state of a newly discovered host."""
        with self._lock:
            state = VisitState(scheme_authority)
            self.states[scheme_authority] = state
            return state

    def get_state(self, scheme_authority: bytes) -> VisitState | None:
        return self.states.get(scheme_authority)

    def add(self, state: VisitState, ip: str) -> Location:
        """Attach a resolved visit state to the entry of its IP.

        Returns the state's new location; :attr:`Location.REFILL` means its
        URLs are all on disk and a refill must be requested.
        """
        with self._lock:
            entry = self.entries.get(ip)
            if entry is None:
                entry = WorkbenchEntry(ip)
                self.entries[ip] = entry
            state.entry = entry
            location = self._place(entry, state)
            self._reschedule(entry)
            return location

    def has_room(self, nbytes: int) -> bool:
        return self.used_bytes + nbytes <= self.capacity_bytes

    def add_url(self, state: VisitState, path_query: bytes) -> None:
        """Append a URL to a visit state's in-memory FIFO.

        Raises:
            BudgetExceeded: If the URL does not fit the byte budget.
        """
        with self._lock:
            if not self.has_room(len(path_query)):
                raise BudgetExceeded(
                    f"{self.used_bytes}+{len(path_query)} > {self.capacity_bytes} bytes"
                )
            state.enqueue(path_query)
            self.used_bytes += len(path_query)
            state.accounted_bytes += len(path_query)
            if state.location is Location.PARKED:
                del self.parked[state.scheme_authority]
                self._insert(state)

    def restore(self, state: VisitState) -> Location:
        """Put a refilled state back into scheduling."""
        with self._lock:
            self._reconcile(state)
            if state.location is not Location.REFILL:
                return state.location
            if state.purge:
                return self._purge_locked(state)
            if state.fifo:
                self._insert(state)
            elif state.on_disk == 0:
                state.location = Location.PARKED
                self.parked[state.scheme_authority] = state
            return state.location

    def unpark_for_refill(self, state: VisitState) -> bool:
        """Move a parked state that just got URLs on disk to the refill state."""
        with self._lock:
            if state.location is not Location.PARKED:
                return False
            del self.parked[state.scheme_authority]
            state.location = Location.REFILL
            return True

    def _insert(self, state: VisitState) -> None:
        entry = state.entry
        state.location = Location.ENTRY
        entry.push(state)
        self._reschedule(entry)

    # -- introspection ----------------------------------------------------

    def entry_count(self) -> int:
        return len(self.entries)

    def parked_count(self) -> int:
        return len(self.parked)

    def scheduled_count(self) -> int:
        with self._lock:
            return sum(len(e.states) for e in self.entries.values())

    def audit(self) -> list[str]:
        """Check heap coherence and byte accounting; return the problems found."""
        problems: list[str] = []
        with self._lock:
            live = {}
            for priority, host, version, ip in self._heap:
                entry = self.entries[ip]
                if entry.version == version:
                    live[ip] = (priority, host)
            accounted = 0
            for state in self.states.values():
                accounted += state.accounted_bytes
            if accounted != self.used_bytes:
                problems.append(f"used_bytes {self.used_bytes} != accounted {accounted}")
            if self.used_bytes > self.capacity_bytes:
                problems.append("byte budget exceeded")
            for ip, entry in self.entries.items():
                for _, _, state in entry.states:
                    if state.location is not Location.ENTRY:
                        problems.append(f"{state.host} in entry {ip} marked {state.location}")
                if entry.acquired or not entry.states:
                    continue
                expected = max(
                    entry.next_fetch, min(s.next_fetch for _, _, s in entry.states)
                )
                if ip not in live:
                    problems.append(f"entry {ip} missing from heap")
                elif live[ip][0] != expected:
                    problems.append(f"entry {ip} priority {live[ip][0]} != {expected}")
        return problems


class TodoMover(threading.Thread):
    """Moves ready visit states from the workbench to the todo queue."""

    def __init__(
        self,
        workbench: Workbench,
        todo: LockFreeQueue[VisitState],
        clock: Clock | None = None,
        max_wait: float = 0.05,
    ) -> None:
        super().__init__(name="todo-mover", daemon=True)
        self.workbench = workbench
        self.todo = todo
        self.clock = clock or MonotonicClock()
        self.max_wait = max_wait
        self.acquired = 0
        self._stop_event = threading.Event()

    def stop(self) -> None:
        self._stop_event.set()
        with self.workbench.changed:
            self.workbench.changed.notify_all()

    def move_ready(self) -> int:
        """Move every state ready now; return how many moved."""
        moved = 0
        now = self.clock.now_ms()
        while True:
            try:
                entry, state = self.workbench.acquire(now)
            except (WorkbenchEmpty, NotReady):
                return moved
            self.todo.put(state)
            self.acquired += 1
            moved += 1

    def run(self) -> None:
        wb = self.workbench
        while not self._stop_event.is_set():
            self.move_ready()
            with wb.changed:
                try:
                    wait = wb.peek_delay(self.clock.now_ms()) / 1000
                except WorkbenchEmpty:
                    wait = self.max_wait
                if wait > 0:
                    wb.changed.wait(min(wait, self.max_wait))


class DoneDrainer(threading.Thread):
    """Releases fetched visit states back to the workbench.

    States that still have URLs on disk are handed to the distributor as
    refill requests; purged states as purge requests.
    """

    def __init__(
        self,
        workbench: Workbench,
        done: LockFreeQueue[VisitState],
        requests: LockFreeQueue[tuple[str, VisitState]],
        delays: DelayPolicy,
        backoff: ExponentialBackoff | None = None,
    ) -> None:
        super().__init__(name="done-drainer", daemon=True)
        self.workbench = workbench
        self.done = done
        self.requests = requests
        self.delays = delays
        self.backoff = backoff or ExponentialBackoff(0.001, 0.05)
        self.released = 0
        self._stop_event = threading.Event()

    def stop(self) -> None:
        self._stop_event.set()

    def drain(self) -> int:
        count = 0
        while (state := self.done.poll()) is not None:
            self.release(state)
            count += 1
        return count

    def release(self, state: VisitState) -> Location:
        entry = state.entry
        location = self.workbench.release(
            entry,
            state,
            state.fetch_end,
            self.delays.host_delay(state),
            self.delays.ip_delay(entry),
        )
        self.released += 1
        if location is Location.REFILL:
            self.requests.put(("refill", state))
        elif location is Location.PURGED:
            self.requests.put(("purge", state))
        return location

    def run(self) -> None:
        while not self._stop_event.is_set():
            if self.drain():
                self.backoff.reset()
            else:
                self.backoff.wait(self._stop_event.wait)


def front_size(mover: Any, drainer: Any) -> int:
    """Visit states in the todo queue or being fetched."""
    return mover.acquired - drainer.released


__all__ = [
    "BudgetExceeded",
    "ConstantDelays",
    "DelayPolicy",
    "DoneDrainer",
    "Location",
    "NotReady",
    "TodoMover",
    "VisitState",
    "Workbench",
    "WorkbenchEmpty",
    "WorkbenchEntry",
    "front_size",
]
