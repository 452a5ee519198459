"""Lock-free FIFOs, backoff and clocks used between crawler components."""

from __future__ import annotations

import time
from collections import deque
from typing import Generic, Iterator, Protocol, TypeVar

T = TypeVar("T")


class LockFreeQueue(Generic[T]):
    """Multi-producer multi-consumer FIFO that never blocks.

    ``deque.append`` and ``deque.popleft`` are atomic, so producers and
    consumers never take a lock.
    """

    def __init__(self) -> None:
        self._items: deque[T] = deque()

    def put(self, item: T) -> None:
        self._items.append(item)

    def put_front(self, item: T) -> None:
        self._items.appendleft(item)

    def poll(self) -> T | None:
        """Return the head item, or ``None`` when the queue is empty."""
        try:
            return self._items.popleft()
        except IndexError:
            return None

    def size(self) -> int:
        return len(self._items)

    def __len__(self) -> int:
        return len(self._items)

    def __iter__(self) -> Iterator[T]:
        return iter(list(self._items))

    def clear(self) -> None:
        self._items.clear()


class ExponentialBackoff:
    """Sleep durations that double on every miss up to a cap."""

    def __init__(self, initial: float = 0.001, maximum: float = 0.256) -> None:
        if initial <= 0 or maximum < initial:
            raise ValueError("backoff needs 0 < initial <= maximum")
        self.initial = initial
        self.maximum = maximum
        self._current = initial

    @property
    def current(self) -> float:
        return self._current

    def next_delay(self) -> float:
        """Return the delay to wait now and double the following one."""
        delay = self._current
        self._current = min(self._current * 2, self.maximum)
        return delay

    def wait(self, sleep=time.sleep) -> float:
        delay = self.next_delay()
        sleep(delay)
        return delay

    def reset(self) -> None:
        self._current = self.initial


class Clock(Protocol):
    def now_ms(self) -> int: ...


class MonotonicClock:
    """Milliseconds from a monotonic source."""

    def now_ms(self) -> int:
        return time.monotonic_ns() // 1_000_000


class ManualClock:
    """A clock that only moves when told to; used by simulations and tests."""

    def __init__(self, start_ms: int = 0) -> None:
        self._now = start_ms

    def now_ms(self) -> int:
        return self._now

    def advance(self, delta_ms: int) -> None:
        self._now += delta_ms

    def set(self, now_ms: int) -> None:
        self._now = now_ms


__all__ = [
    "Clock",
    "ExponentialBackoff",
    "LockFreeQueue",
    "ManualClock",
    "MonotonicClock",
]
