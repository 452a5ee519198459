"""URL-seen cache and content duplicate filter."""

from __future__ import annotations

import threading

from pybloom_live import ScalableBloomFilter


class UrlSeenCache:
    """Approximate LRU set of 128-bit URL fingerprints.

    Two generations of at most ``capacity // 2`` entries each: a hit in the
    old generation promotes the fingerprint, and when the young generation
    fills up the old one is dropped.  Eviction may let a URL through twice;
    the sieve downstream removes such repeats exactly.
    """

    def __init__(self, capacity: int = 1 << 20) -> None:
        if capacity < 2:
            raise ValueError("capacity must be at least 2")
        self.capacity = capacity
        self._generation = capacity // 2
        self._young: set[int] = set()
        self._old: set[int] = set()
        self._lock = threading.Lock()
        self.hits = 0
        self.misses = 0

    def check_and_add(self, fingerprint: int) -> bool:
        """Return True if the fingerprint was (probably) seen before."""
        with self._lock:
            if fingerprint in self._young:
                self.hits += 1
                return True
            seen = fingerprint in self._old
            if seen:
                self._old.discard(fingerprint)
                self.hits += 1
            else:
                self.misses += 1
            if len(self._young) >= self._generation:
                self._old = self._young
                self._young = set()
            self._young.add(fingerprint)
            return seen

    def __contains__(self, fingerprint: int) -> bool:
        with self._lock:
            return fingerprint in self._young or fingerprint in self._old

    def __len__(self) -> int:
        return len(self._young) + len(self._old)

    @property
    def hit_rate(self) -> float:
        total = self.hits + self.misses
        return self.hits / total if total else 0.0


class DuplicateFilter:
    """Bloom filter over content digests; never reports a stored digest as new."""

    def __init__(self, expected: int = 1_000_000, false_positive_rate: float = 1e-6) -> None:
        self.expected = expected
        self.false_positive_rate = false_positive_rate
        self._bloom = ScalableBloomFilter(
            initial_capacity=expected,
            error_rate=false_positive_rate,
            mode=ScalableBloomFilter.LARGE_SET_GROWTH,
        )
        self._lock = threading.Lock()
        self.duplicates = 0
        self.archetypes = 0

    def check_and_add(self, content_digest: int) -> bool:
        """Record a digest; return True if it was already present."""
        key = f"{content_digest:032x}"
        with self._lock:
            present = self._bloom.add(key)
        if present:
            self.duplicates += 1
        else:
            self.archetypes += 1
        return bool(present)


__all__ = ["DuplicateFilter", "UrlSeenCache"]
