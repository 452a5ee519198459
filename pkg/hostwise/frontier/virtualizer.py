"""On-disk per-host URL queues kept in memory-mapped append-only logs.

The log region is a sequence of fixed-size files ``queue.NNNN.log`` viewed
as one contiguous address space; offsets are absolute across the files and
only ever grow.  A record is::

    [next: u64 big-endian][length: varint][path+query bytes]

``next`` is the absolute offset of the following record of the same host,
or :data:`~hostwise.core.constants.NO_NEXT` for the tail.  Records never
straddle two files: when one does not fit, the rest of the file is left
unused.

Only per-host head/tail/count/bytes live in memory.  Collection copies the
live records of the oldest files to the write cursor and then deletes those
files, so the region starts at the first live file (``base``).

``meta.snapshot`` is written on open, on close and after every collection.
``hosts.journal`` starts with the snapshot's epoch and records the head of
every queue started after it.  A snapshot written by :meth:`close` is loaded
as is; otherwise the queues are rebuilt by walking the chains from the
snapshot and journal heads (URLs dequeued after the snapshot may be served
again).  Files are deleted only after a snapshot that no longer references
them, so every chain stays walkable if a collection is interrupted.
"""

from __future__ import annotations

import json
import logging
import mmap
import os
import struct
from collections import Counter
from dataclasses import dataclass
from pathlib import Path

from hostwise.core.constants import NO_NEXT
from hostwise.utils.persistence import write_json_atomic

logger = logging.getLogger(__name__)

SNAPSHOT_FILE = "meta.snapshot"
JOURNAL_FILE = "hosts.journal"
DEFAULT_LOG_FILE_SIZE = 64 * 1024 * 1024
_NEXT = struct.Struct(">Q")


class UnknownHost(KeyError):
    """Dequeue from a host with no virtual queue."""


def encode_varint(value: int) -> bytes:
    out = bytearray()
    while True:
        byte = value & 0x7F
        value >>= 7
        if value:
            out.append(byte | 0x80)
        else:
            out.append(byte)
            return bytes(out)


def decode_varint(buf, offset: int) -> tuple[int, int]:
    """Return ``(value, bytes consumed)`` for the varint at ``offset``."""
    value = 0
    shift = 0
    pos = offset
    while True:
        byte = buf[pos]
        value |= (byte & 0x7F) << shift
        pos += 1
        if not byte & 0x80:
            return value, pos - offset
        shift += 7


@dataclass
class HostQueue:
    head: int
    tail: int
    count: int = 0
    bytes: int = 0


class VirtualQueueStore:
    """Per-host FIFO queues of path+query byte strings on disk.

    Single writer: callers serialize mutations.  :meth:`total_count`,
    :attr:`used_bytes` and :attr:`allocated_bytes` read plain counters and
    may be called from any thread.
    """

    def __init__(
        self,
        directory: Path,
        log_file_size: int = DEFAULT_LOG_FILE_SIZE,
        gc_threshold: float = 0.5,
    ) -> None:
        if not 0 < gc_threshold < 1:
            raise ValueError("gc_threshold must be in (0, 1)")
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)
        self.file_size = log_file_size
        self.gc_threshold = gc_threshold
        self._maps: list[mmap.mmap] = []
        self._files: list = []
        self._meta: dict[bytes, HostQueue] = {}
        self.base_index = 0
        self.cursor = 0
        self.used_bytes = 0
        self.collections = 0
        self.epoch = 0
        self._total = 0
        self._closed = False
        self._open_existing()
        self._journal = open(self.directory / JOURNAL_FILE, "a", encoding="ascii")
        self._write_snapshot(clean=False)

    # -- file region ----------------------------------------------------

    def _log_path(self, index: int) -> Path:
        return self.directory / f"queue.{index:04d}.log"

    def _map_file(self, index: int) -> None:
        """Map every file from the current top up to absolute ``index``."""
        while self.base_index + len(self._maps) <= index:
            path = self._log_path(self.base_index + len(self._maps))
            f = open(path, "a+b")
            if os.path.getsize(path) < self.file_size:
                f.truncate(self.file_size)
            self._files.append(f)
            self._maps.append(mmap.mmap(f.fileno(), self.file_size))

    def _locate(self, offset: int) -> tuple[mmap.mmap, int]:
        index, local = divmod(offset, self.file_size)
        return self._maps[index - self.base_index], local

    def _write(self, offset: int, data: bytes) -> None:
        mm, local = self._locate(offset)
        mm[local : local + len(data)] = data

    def _read_header(self, offset: int) -> tuple[int, int, int]:
        """Return ``(next, payload length, header size)`` of the record at ``offset``."""
        mm, local = self._locate(offset)
        (nxt,) = _NEXT.unpack_from(mm, local)
        length, width = decode_varint(mm, local + 8)
        return nxt, length, 8 + width

    def _read_record(self, offset: int) -> tuple[int, bytes, int]:
        """Return ``(next, payload, record size)`` of the record at ``offset``."""
        nxt, length, header = self._read_header(offset)
        mm, local = self._locate(offset)
        return nxt, mm[local + header : local + header + length], header + length

    def _reserve(self, size: int) -> int:
        if size > self.file_size:
            raise ValueError(f"record of {size} bytes exceeds log file size {self.file_size}")
        local = self.cursor % self.file_size
        if local + size > self.file_size:
            self.cursor += self.file_size - local
        self._map_file(self.cursor // self.file_size)
        offset = self.cursor
        self.cursor += size
        return offset

    @property
    def base_offset(self) -> int:
        return self.base_index * self.file_size

    @property
    def allocated_bytes(self) -> int:
        return self.cursor - self.base_offset

    @property
    def file_count(self) -> int:
        return len(self._maps)

    # -- queue operations -------------------------------------------------

    def append(self, host: bytes, path_query: bytes) -> None:
        record = _NEXT.pack(NO_NEXT) + encode_varint(len(path_query)) + path_query
        offset = self._reserve(len(record))
        self._write(offset, record)
        meta = self._meta.get(host)
        if meta is None:
            self._meta[host] = HostQueue(head=offset, tail=offset, count=1, bytes=len(record))
            self._journal.write(f"{offset} {host.decode('ascii')}\n")
            self._journal.flush()
        else:
            self._write(meta.tail, _NEXT.pack(offset))
            meta.tail = offset
            meta.count += 1
            meta.bytes += len(record)
        self.used_bytes += len(record)
        self._total += 1

    def dequeue(
        self, host: bytes, max_n: int, max_bytes: int | None = None
    ) -> list[bytes]:
        """Remove and return up to ``max_n`` of the host's oldest URLs.

        When ``max_bytes`` is given, the returned payloads total at most
        that many bytes, except that one URL is always returned.
        """
        meta = self._meta.get(host)
        if meta is None:
            raise UnknownHost(host)
        out: list[bytes] = []
        taken = 0
        offset = meta.head
        while meta.count and len(out) < max_n:
            nxt, payload, size = self._read_record(offset)
            if max_bytes is not None and out and taken + len(payload) > max_bytes:
                break
            out.append(payload)
            taken += len(payload)
            meta.count -= 1
            meta.bytes -= size
            self.used_bytes -= size
            offset = nxt
        self._total -= len(out)
        if meta.count == 0:
            del self._meta[host]
        else:
            meta.head = offset
        if self._should_collect():
            self.collect(self.gc_threshold)
        return out

    def count(self, host: bytes) -> int:
        meta = self._meta.get(host)
        return meta.count if meta else 0

    def hosts(self) -> list[bytes]:
        return list(self._meta)

    def total_count(self) -> int:
        return self._total

    def _should_collect(self) -> bool:
        allocated = self.allocated_bytes
        return allocated > self.file_size and self.used_bytes < self.gc_threshold * allocated

    # -- compaction -------------------------------------------------------

    def collect(self, threshold: float | None = None) -> int:
        """Free the oldest log files by moving their live records to the cursor.

        Files are evacuated oldest first and collection stops at the first
        file after which used/allocated is back at ``threshold``;
        ``threshold=None`` evacuates every file behind the one holding the
        cursor.  Runs only when used/allocated is below ``threshold``.
        Returns the number of bytes reclaimed.
        """
        before = self.allocated_bytes
        if before == 0:
            return 0
        if threshold is not None and self.used_bytes >= threshold * before:
            return 0
        last = self.cursor // self.file_size
        if last <= self.base_index:
            return 0
        cut = self._choose_cut(self._live_bytes_per_file(), last, threshold)
        moved = self._relocate_below(cut * self.file_size)
        self.collections += 1
        self._write_snapshot(clean=False, base=cut)
        self._drop_files_below(cut)
        logger.info(
            "Virtualizer collect: %d -> %d bytes (%d moved), %d files, %d hosts",
            before,
            self.allocated_bytes,
            moved,
            self.file_count,
            len(self._meta),
        )
        return before - self.allocated_bytes

    def _live_bytes_per_file(self) -> Counter:
        live: Counter = Counter()
        for meta in self._meta.values():
            offset = meta.head
            for _ in range(meta.count):
                nxt, length, header = self._read_header(offset)
                live[offset // self.file_size] += header + length
                offset = nxt
        return live

    def _choose_cut(self, live: Counter, last: int, threshold: float | None) -> int:
        """Return the absolute index of the first file to keep."""
        if threshold is None:
            return last
        moved = 0
        for index in range(self.base_index, last):
            moved += live[index]
            allocated = self.cursor + moved - (index + 1) * self.file_size
            if self.used_bytes >= threshold * allocated:
                return index + 1
        return last

    def _relocate_below(self, limit: int) -> int:
        """Copy every live record below ``limit`` to the cursor, relinking chains.

        A copy is written before the pointer to it, so the chain from the
        old head and the chain from the new one yield the same URLs at
        every step.
        """
        moved = 0
        for meta in self._meta.values():
            prev: int | None = None
            offset = meta.head
            for _ in range(meta.count):
                nxt, payload, size = self._read_record(offset)
                current = offset
                if offset < limit:
                    current = self._reserve(size)
                    self._write(current, _NEXT.pack(nxt) + encode_varint(len(payload)) + payload)
                    if prev is None:
                        meta.head = current
                    else:
                        self._write(prev, _NEXT.pack(current))
                    if offset == meta.tail:
                        meta.tail = current
                    moved += size
                prev = current
                offset = nxt
        return moved

    def _drop_files_below(self, index: int) -> None:
        while self.base_index < index and self._maps:
            mm = self._maps.pop(0)
            f = self._files.pop(0)
            mm.close()
            f.close()
            self._log_path(self.base_index).unlink()
            self.base_index += 1
        self.base_index = max(self.base_index, index)

    # -- persistence ------------------------------------------------------

    def _write_snapshot(self, clean: bool, base: int | None = None) -> None:
        for mm in self._maps:
            mm.flush()
        self.epoch += 1
        data = {
            "file_size": self.file_size,
            "base": self.base_index if base is None else base,
            "cursor": self.cursor,
            "used_bytes": self.used_bytes,
            "epoch": self.epoch,
            "clean": clean,
            "hosts": {
                host.decode("ascii"): [m.head, m.tail, m.count, m.bytes]
                for host, m in self._meta.items()
            },
        }
        write_json_atomic(self.directory / SNAPSHOT_FILE, data, indent=None)
        self._journal.seek(0)
        self._journal.truncate()
        self._journal.write(f"epoch {self.epoch}\n")
        self._journal.flush()

    def _read_journal(self) -> dict[bytes, int]:
        """Heads journaled since the current snapshot, if the epochs match."""
        path = self.directory / JOURNAL_FILE
        if not path.exists():
            return {}
        heads: dict[bytes, int] = {}
        for line in path.read_text(encoding="ascii").splitlines():
            first, _, rest = line.partition(" ")
            if first == "epoch":
                if int(rest) != self.epoch:
                    return {}
                continue
            if rest and int(first) >= self.base_offset:
                heads[rest.encode("ascii")] = int(first)
        return heads

    def _open_existing(self) -> None:
        indices = sorted(
            int(p.name.split(".")[1]) for p in self.directory.glob("queue.*.log")
        )
        if not indices:
            return
        snapshot_path = self.directory / SNAPSHOT_FILE
        snapshot: dict = {}
        if snapshot_path.exists():
            snapshot = json.loads(snapshot_path.read_text(encoding="utf-8"))
            if snapshot.get("file_size", self.file_size) != self.file_size:
                raise ValueError(
                    f"log files were written with size {snapshot['file_size']}, "
                    f"configured {self.file_size}"
                )
        self.base_index = snapshot.get("base", indices[0])
        self.epoch = snapshot.get("epoch", 0)
        for index in indices:
            if index < self.base_index:
                # Left behind by a collection interrupted after its snapshot.
                self._log_path(index).unlink()
        if indices[-1] < self.base_index:
            self.cursor = self.base_offset
            return
        self._map_file(indices[-1])
        if snapshot.get("clean"):
            self.cursor = snapshot["cursor"]
            self.used_bytes = snapshot["used_bytes"]
            for host, (head, tail, count, size) in snapshot["hosts"].items():
                self._meta[host.encode("ascii")] = HostQueue(head, tail, count, size)
                self._total += count
            logger.info("Virtualizer reopened %d hosts from snapshot", len(self._meta))
            return
        heads: dict[bytes, int] = {
            host.encode("ascii"): values[0]
            for host, values in snapshot.get("hosts", {}).items()
        }
        heads.update(self._read_journal())
        self._rebuild_from_heads(heads, snapshot.get("cursor", self.base_offset))

    def _rebuild_from_heads(self, heads: dict[bytes, int], cursor: int) -> None:
        low = self.base_offset
        limit = (self.base_index + len(self._maps)) * self.file_size
        high = max(cursor, low)
        for host, head in heads.items():
            meta = HostQueue(head=head, tail=head)
            offset = head
            while offset != NO_NEXT and low <= offset < limit:
                nxt, length, header = self._read_header(offset)
                meta.tail = offset
                meta.count += 1
                meta.bytes += header + length
                high = max(high, offset + header + length)
                offset = nxt
            if meta.count:
                self._meta[host] = meta
                self.used_bytes += meta.bytes
                self._total += meta.count
        self.cursor = high
        logger.warning(
            "Virtualizer rebuilt %d host queues by walking chains", len(self._meta)
        )

    def close(self) -> None:
        if self._closed:
            return
        self._closed = True
        self._write_snapshot(clean=True)
        self._journal.close()
        for mm in self._maps:
            mm.close()
        for f in self._files:
            f.close()

    def __enter__(self) -> "VirtualQueueStore":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


__all__ = ["HostQueue", "UnknownHost", "VirtualQueueStore", "decode_varint", "encode_varint"]
