"""Mercator-style sieve: a queue with memory backed by disk.

Each URL enqueued any number of times is dequeued exactly once, in order of
first appearance, while main memory holds only a fixed-size array of 64-bit
hashes.  Two different URLs with the same hash count as one: the later is
dropped as already seen.

Layout of the sieve directory (all files start with a 12-byte header:
4-byte magic, format version and hash version as big-endian u32):

``known.hashes``
    Sorted, duplicate-free big-endian u64 hashes of every URL ever seen.
``epoch.aux``
    Length-prefixed canonical URLs enqueued since the last flush.
``ready.queue``
    Length-prefixed canonical URLs that passed the flush, in emission order.
``flush.journal``
    Present only while a flush is in progress; drives crash recovery.
``sieve.state``
    Read position in the ready queue, saved on flush and close.
"""

from __future__ import annotations

import json
import logging
import os
import struct
import threading
from collections.abc import Callable
from pathlib import Path

import mmh3
import numpy as np

from hostwise.core.burl import CrawlUrl, from_canonical
from hostwise.core.constants import HASH_SEED, HASH_VERSION
from hostwise.utils.persistence import write_json_atomic

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
HEADER_SIZE = 12
MERGE_CHUNK = 1 << 13
EMIT_BATCH = 1 << 12
EMIT_BATCH_BYTES = 1 << 18
SLOT_BYTES = 9
FLUSH_RESERVE = 2 * 1024 * 1024
_LEN = struct.Struct(">I")
_KNOWN_DTYPE = np.dtype(">u8")

KNOWN_FILE = "known.hashes"
AUX_FILE = "epoch.aux"
READY_FILE = "ready.queue"
JOURNAL_FILE = "flush.journal"
STATE_FILE = "sieve.state"


class SieveClosed(RuntimeError):
    """Operation on a closed sieve."""


class SieveCorrupt(OSError):
    """A sieve file has a wrong header or a truncated record."""


def default_hasher(data: bytes) -> int:
    return mmh3.hash64(data, HASH_SEED, signed=False)[0]


def sieve_capacity(size_bytes: int) -> int:
    """Pending slots that fit in ``size_bytes`` next to the flush reserve."""
    reserve = min(FLUSH_RESERVE, size_bytes // 2)
    return max(1, (size_bytes - reserve) // SLOT_BYTES)


def _header(magic: bytes) -> bytes:
    return magic + struct.pack(">II", FORMAT_VERSION, HASH_VERSION)


_HEADERS = {
    KNOWN_FILE: _header(b"HWSK"),
    AUX_FILE: _header(b"HWSA"),
    READY_FILE: _header(b"HWSR"),
}


def _check_header(path: Path) -> None:
    with open(path, "rb") as f:
        head = f.read(HEADER_SIZE)
    if head != _HEADERS[path.name]:
        raise SieveCorrupt(f"bad header in {path}")


def _iter_records(f, start: int, end: int):
    f.seek(start)
    pos = start
    while pos < end:
        raw = f.read(_LEN.size)
        if len(raw) < _LEN.size:
            raise SieveCorrupt(f"truncated record length at offset {pos}")
        (length,) = _LEN.unpack(raw)
        data = f.read(length)
        if len(data) < length:
            raise SieveCorrupt(f"truncated record at offset {pos}")
        pos += _LEN.size + length
        yield data


class MercatorSieve:
    """Disk-backed exactly-once, first-appearance-ordered URL queue.

    Many threads may enqueue; one consumer dequeues.  ``size_bytes`` bounds
    everything a flush needs: each pending slot costs :data:`SLOT_BYTES`
    (its hash plus a one-byte flag), and :data:`FLUSH_RESERVE` is kept for
    the fixed-size blocks the merge and emit steps work in.
    """

    def __init__(
        self,
        directory: Path,
        size_bytes: int = 256 * 1024 * 1024,
        hasher: Callable[[bytes], int] = default_hasher,
    ) -> None:
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)
        self.capacity = sieve_capacity(size_bytes)
        self.hasher = hasher
        self._pending = np.zeros(self.capacity, dtype=np.uint64)
        self._flags = np.zeros(self.capacity, dtype=bool)
        self._count = 0
        self._lock = threading.RLock()
        self._closed = False

        self.flushes = 0
        self.known_count = 0
        self.ready_count = 0

        self._recover()
        self._aux = open(self._path(AUX_FILE), "ab")
        self._ready_writer = open(self._path(READY_FILE), "ab")
        self._ready_reader = open(self._path(READY_FILE), "rb")
        self._reload_pending()

    def _path(self, name: str) -> Path:
        return self.directory / name

    # -- recovery -------------------------------------------------------

    def _recover(self) -> None:
        state: dict = {}
        state_path = self._path(STATE_FILE)
        if state_path.exists():
            state = json.loads(state_path.read_text(encoding="utf-8"))
            if state.get("hash_version") != HASH_VERSION:
                raise SieveCorrupt(
                    f"sieve written with hash version {state.get('hash_version')}, "
                    f"this build uses {HASH_VERSION}"
                )

        journal = self._path(JOURNAL_FILE)
        if journal.exists():
            entry = json.loads(journal.read_text(encoding="utf-8"))
            tmp_known = self._path(KNOWN_FILE + ".tmp")
            if entry["phase"] == "commit":
                if tmp_known.exists():
                    os.replace(tmp_known, self._path(KNOWN_FILE))
                self._reset_file(AUX_FILE)
                state = {**state, "ready_count": entry["ready_count_after"]}
                logger.warning("Completed interrupted sieve flush from journal")
            else:
                with open(self._path(READY_FILE), "r+b") as f:
                    f.truncate(entry["ready_length"])
                tmp_known.unlink(missing_ok=True)
                logger.warning("Rolled back interrupted sieve flush; replaying epoch")
            journal.unlink()

        for name in (KNOWN_FILE, AUX_FILE, READY_FILE):
            path = self._path(name)
            if not path.exists() or path.stat().st_size == 0:
                self._reset_file(name)
            else:
                _check_header(path)

        self._read_offset = int(state.get("read_offset", HEADER_SIZE))
        self.ready_count = int(state.get("ready_count", 0))
        self.flushes = int(state.get("flushes", 0))
        ready_size = self._path(READY_FILE).stat().st_size
        if self._read_offset > ready_size:
            self._read_offset = HEADER_SIZE
        known_size = self._path(KNOWN_FILE).stat().st_size
        self.known_count = (known_size - HEADER_SIZE) // 8

    def _reset_file(self, name: str) -> None:
        with open(self._path(name), "wb") as f:
            f.write(_HEADERS[name])

    def _reload_pending(self) -> None:
        """Rebuild the in-memory hash array from a leftover auxiliary file."""
        aux_path = self._path(AUX_FILE)
        end = aux_path.stat().st_size
        if end == HEADER_SIZE:
            return
        with open(aux_path, "rb") as f:
            count = sum(1 for _ in _iter_records(f, HEADER_SIZE, end))
            if count > self.capacity:
                logger.warning(
                    "Sieve auxiliary file holds %d URLs, more than the capacity %d",
                    count,
                    self.capacity,
                )
                self._pending = np.zeros(count, dtype=np.uint64)
                self._flags = np.zeros(count, dtype=bool)
            for i, data in enumerate(_iter_records(f, HEADER_SIZE, end)):
                self._pending[i] = self.hasher(data)
        self._count = count
        logger.info("Sieve reloaded %d pending URLs from %s", self._count, aux_path)
        if self._count >= self.capacity:
            self._flush_locked()
            if len(self._pending) != self.capacity:
                self._pending = np.zeros(self.capacity, dtype=np.uint64)
                self._flags = np.zeros(self.capacity, dtype=bool)

    # -- queue operations -----------------------------------------------

    def enqueue(self, url: CrawlUrl) -> None:
        data = bytes(url)
        h = self.hasher(data)
        with self._lock:
            if self._closed:
                raise SieveClosed("sieve is closed")
            self._pending[self._count] = h
            self._count += 1
            self._aux.write(_LEN.pack(len(data)))
            self._aux.write(data)
            if self._count >= self.capacity:
                self._flush_locked()

    def dequeue(self) -> CrawlUrl | None:
        """Return the next ready URL or ``None`` when nothing is ready.

        When the ready queue is exhausted but URLs are pending, a flush is
        performed first.
        """
        with self._lock:
            if self._closed:
                raise SieveClosed("sieve is closed")
            data = self._read_ready()
            if data is None and self._count:
                self._flush_locked()
                data = self._read_ready()
            return None if data is None else from_canonical(data)

    def _read_ready(self) -> bytes | None:
        if self.ready_count == 0:
            return None
        self._ready_reader.seek(self._read_offset)
        raw = self._ready_reader.read(_LEN.size)
        if len(raw) < _LEN.size:
            return None
        (length,) = _LEN.unpack(raw)
        data = self._ready_reader.read(length)
        self._read_offset += _LEN.size + length
        self.ready_count -= 1
        return data

    def flush(self) -> None:
        with self._lock:
            if self._closed:
                raise SieveClosed("sieve is closed")
            self._flush_locked()

    def pending(self) -> int:
        return self._count

    def size(self) -> int:
        """URLs that may still be dequeued (ready plus not yet flushed)."""
        return self.ready_count + self._count

    def is_empty(self) -> bool:
        return self.size() == 0

    # -- flushing -------------------------------------------------------

    def _compact_ready(self) -> None:
        if self.ready_count == 0 and self._read_offset > HEADER_SIZE:
            self._ready_writer.close()
            self._reset_file(READY_FILE)
            self._ready_writer = open(self._path(READY_FILE), "ab")
            self._read_offset = HEADER_SIZE

    def _merge_known(self, n: int) -> int:
        """Merge the flagged hashes of sorted ``pending[:n]`` into the known file.

        Clears the flag of every hash that was already known and returns the
        number of new ones.  Both sides are read in blocks of
        :data:`MERGE_CHUNK` hashes.
        """
        hashes = self._pending[:n]
        flags = self._flags[:n]
        added = 0
        done = 0
        known_path = self._path(KNOWN_FILE)
        tmp_path = self._path(KNOWN_FILE + ".tmp")
        with open(known_path, "rb") as src, open(tmp_path, "wb") as dst:
            src.seek(HEADER_SIZE)
            dst.write(_HEADERS[KNOWN_FILE])
            while True:
                raw = src.read(MERGE_CHUNK * 8)
                if not raw:
                    break
                chunk = np.frombuffer(raw, dtype=_KNOWN_DTYPE).astype(np.uint64)
                del raw
                stop = done + int(np.searchsorted(hashes[done:], chunk[-1], side="right"))
                written = 0
                for start in range(done, stop, MERGE_CHUNK):
                    end = min(start + MERGE_CHUNK, stop)
                    part = hashes[start:end]
                    # every value in part is <= chunk[-1], so pos is in range
                    pos = np.searchsorted(chunk, part)
                    flags[start:end] &= chunk[pos] != part
                    del pos
                    new = part[flags[start:end]]
                    if len(new):
                        upto = int(np.searchsorted(chunk, new[-1], side="right"))
                        merged = np.concatenate((chunk[written:upto], new))
                        merged.sort()
                        dst.write(merged.astype(_KNOWN_DTYPE).tobytes())
                        written = upto
                        added += len(new)
                        del merged
                dst.write(chunk[written:].astype(_KNOWN_DTYPE).tobytes())
                done = stop
            for start in range(done, n, MERGE_CHUNK):
                end = min(start + MERGE_CHUNK, n)
                new = hashes[start:end][flags[start:end]]
                dst.write(new.astype(_KNOWN_DTYPE).tobytes())
                added += len(new)
            dst.flush()
            os.fsync(dst.fileno())
        return added

    def _emit_batch(self, batch: list[bytes], n: int) -> int:
        """Append the batch's first appearances of new hashes to the ready queue."""
        hashes = self._pending[:n]
        flags = self._flags[:n]
        values = np.fromiter(map(self.hasher, batch), dtype=np.uint64, count=len(batch))
        emitted = 0
        for data, j in zip(batch, np.searchsorted(hashes, values).tolist()):
            if flags[j]:
                flags[j] = False
                self._ready_writer.write(_LEN.pack(len(data)))
                self._ready_writer.write(data)
                emitted += 1
        return emitted

    def _flush_locked(self) -> None:
        n = self._count
        if n == 0:
            return
        self._aux.flush()
        self._compact_ready()

        # Sort in place; the flag marks the first of each run of equal hashes.
        hashes = self._pending[:n]
        hashes.sort()
        flags = self._flags[:n]
        flags[0] = True
        np.not_equal(hashes[1:], hashes[:-1], out=flags[1:])

        ready_length = self._ready_writer.tell()
        journal = self._path(JOURNAL_FILE)
        write_json_atomic(journal, {"phase": "merge", "ready_length": ready_length})

        added = self._merge_known(n)

        # Stream the epoch in arrival order; a flag is cleared once its hash
        # has been emitted, so only first appearances reach the ready queue.
        emitted = 0
        aux_path = self._path(AUX_FILE)
        with open(aux_path, "rb") as f:
            batch: list[bytes] = []
            batch_bytes = 0
            for data in _iter_records(f, HEADER_SIZE, aux_path.stat().st_size):
                batch.append(data)
                batch_bytes += len(data)
                if len(batch) == EMIT_BATCH or batch_bytes >= EMIT_BATCH_BYTES:
                    emitted += self._emit_batch(batch, n)
                    batch = []
                    batch_bytes = 0
            if batch:
                emitted += self._emit_batch(batch, n)
        self._ready_writer.flush()
        os.fsync(self._ready_writer.fileno())

        write_json_atomic(
            journal,
            {
                "phase": "commit",
                "ready_length": ready_length,
                "ready_count_after": self.ready_count + emitted,
            },
        )
        os.replace(self._path(KNOWN_FILE + ".tmp"), self._path(KNOWN_FILE))
        self._aux.close()
        self._reset_file(AUX_FILE)
        self._aux = open(aux_path, "ab")
        journal.unlink()

        self.known_count += added
        self.ready_count += emitted
        self._count = 0
        self.flushes += 1
        self._save_state()
        logger.debug(
            "Sieve flush %d: %d pending, %d new, %d known",
            self.flushes,
            n,
            emitted,
            self.known_count,
        )

    def _save_state(self) -> None:
        write_json_atomic(
            self._path(STATE_FILE),
            {
                "read_offset": self._read_offset,
                "ready_count": self.ready_count,
                "flushes": self.flushes,
                "hash_version": HASH_VERSION,
            },
        )

    def close(self) -> None:
        """Persist the read position and close files.

        Pending URLs stay in the auxiliary file and are reloaded on reopen.
        """
        with self._lock:
            if self._closed:
                return
            self._closed = True
            self._aux.close()
            self._ready_writer.close()
            self._ready_reader.close()
            self._save_state()

    def __enter__(self) -> "MercatorSieve":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


__all__ = [
    "MercatorSieve",
    "SieveClosed",
    "SieveCorrupt",
    "default_hasher",
    "sieve_capacity",
]
