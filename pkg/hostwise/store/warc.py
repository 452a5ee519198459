"""WARC store: per-record gzip members written by a single flusher thread.

Parse workers build and compress their own records; the compressed bytes
go through a FIFO to the flusher, which appends them to
``crawl-NNNNN.warc.gz`` and rotates to a new file at ``max_file_size``.
File order is completion order.  Every file starts with a warcinfo record.
"""

from __future__ import annotations

import base64
import hashlib
import io
import logging
import mmap
import queue
import re
import threading
import zlib
from collections.abc import Iterator
from dataclasses import dataclass, field
from http import HTTPStatus
from pathlib import Path
from typing import Literal

from warcio.archiveiterator import ArchiveIterator
from warcio.exceptions import ArchiveLoadFailed
from warcio.statusandheaders import StatusAndHeaders
from warcio.warcwriter import WARCWriter

from hostwise import __version__
from hostwise.core.constants import DIGEST_VERSION, HASH_VERSION
from hostwise.pipeline.fetch_data import FetchData

logger = logging.getLogger(__name__)

DIGEST_HEADER = "X-Hostwise-Content-Digest"
DUPLICATE_HEADER = "X-Hostwise-Is-Duplicate"
FILE_PATTERN = re.compile(r"^crawl-(\d{5})\.warc\.gz$")
GZIP_MAGIC = b"\x1f\x8b\x08"
_STOP = object()
READ_CHUNK = 1 << 16


class StoreFailed(OSError):
    """The flusher could not write; every later call on the store raises this."""


class CorruptRecord(ValueError):
    """A damaged member or record; ``offset`` is its position in the file."""

    def __init__(self, message: str, offset: int) -> None:
        self.offset = offset
        super().__init__(f"{message} at offset {offset}")


def _payload_digest(body: bytes) -> str:
    return "sha1:" + base64.b32encode(hashlib.sha1(body).digest()).decode("ascii")


def _compress(build) -> bytes:
    buffer = io.BytesIO()
    writer = WARCWriter(buffer, gzip=True)
    writer.write_record(build(writer))
    return buffer.getvalue()


def build_record(fd: FetchData, content_digest: int, is_duplicate: bool) -> bytes:
    """One gzip member holding a response (or revisit) record for ``fd``."""
    try:
        reason = HTTPStatus(fd.status).phrase
    except ValueError:
        reason = "Unknown"
    http_headers = StatusAndHeaders(f"{fd.status} {reason}", list(fd.headers), protocol="HTTP/1.1")
    warc_headers = {
        DIGEST_HEADER: f"{content_digest:032x}",
        DUPLICATE_HEADER: "true" if is_duplicate else "false",
    }
    if fd.truncated:
        warc_headers["WARC-Truncated"] = "length"
    uri = str(fd.url)
    body = fd.content

    def build(writer: WARCWriter):
        if is_duplicate:
            return writer.create_revisit_record(
                uri,
                _payload_digest(body),
                None,
                None,
                http_headers=http_headers,
                warc_headers_dict=warc_headers,
            )
        return writer.create_warc_record(
            uri,
            "response",
            payload=io.BytesIO(body),
            http_headers=http_headers,
            warc_headers_dict=warc_headers,
        )

    return _compress(build)


def build_warcinfo(filename: str, agent: str) -> bytes:
    info = {
        "software": f"hostwise/{__version__}",
        "format": "WARC File Format 1.1",
        "hostwise-agent": agent,
        "hostwise-hash-version": str(HASH_VERSION),
        "hostwise-digest-version": str(DIGEST_VERSION),
    }
    return _compress(lambda writer: writer.create_warcinfo_record(filename, info))


class WarcStore:
    """Thread-safe WARC writer; :meth:`store` may be called from any thread."""

    def __init__(
        self,
        directory: Path,
        max_file_size: int = 2**30,
        duplicate_policy: Literal["mark", "drop"] = "mark",
        agent: str = "agent-0",
        queue_size: int = 4096,
    ) -> None:
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)
        self.max_file_size = max_file_size
        self.duplicate_policy = duplicate_policy
        self.agent = agent
        self._queue: queue.Queue[object] = queue.Queue(maxsize=queue_size)
        self._serial = self._next_serial()
        self._file = None
        self._file_size = 0
        self.records_in_file = 0
        self._closed = False
        self.error: Exception | None = None
        self.records = 0
        self.bytes_written = 0
        self.dropped_duplicates = 0
        self.files: list[Path] = []
        self._flusher = threading.Thread(target=self._run, name="warc-flusher", daemon=True)
        self._flusher.start()

    def _next_serial(self) -> int:
        serials = [
            int(m.group(1))
            for p in self.directory.iterdir()
            if (m := FILE_PATTERN.match(p.name))
        ]
        return max(serials, default=-1) + 1

    # -- producer side ----------------------------------------------------

    def store(self, fd: FetchData, content_digest: int, is_duplicate: bool) -> bool:
        """Compress a record on the calling thread and queue it for writing.

        Returns False when the record is not written (duplicate with the
        ``drop`` policy).
        """
        if self._closed:
            raise RuntimeError("store is closed")
        self._check()
        if is_duplicate and self.duplicate_policy == "drop":
            self.dropped_duplicates += 1
            return False
        self._queue.put(build_record(fd, content_digest, is_duplicate))
        return True

    def flush(self) -> None:
        """Block until every queued record has been written."""
        self._queue.join()
        self._check()
        if self._file is not None:
            self._file.flush()

    def close(self) -> None:
        if self._closed:
            return
        self._closed = True
        self._queue.put(_STOP)
        self._flusher.join()
        if self._file is not None:
            try:
                self._file.close()
            except OSError as e:
                self.error = self.error or e
            self._file = None
        logger.info("WARC store closed: %d records in %d files", self.records, len(self.files))
        self._check()

    def _check(self) -> None:
        if self.error is not None:
            raise StoreFailed(f"WARC store failed: {self.error}") from self.error

    def __enter__(self) -> "WarcStore":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    # -- flusher ----------------------------------------------------------

    def _open_next(self) -> None:
        if self._file is not None:
            self._file.close()
        path = self.directory / f"crawl-{self._serial:05d}.warc.gz"
        self._serial += 1
        self._file = open(path, "wb")
        self._file_size = 0
        self.files.append(path)
        logger.info("Opened WARC file %s", path)
        self._write(build_warcinfo(path.name, self.agent))

    def _write(self, data: bytes) -> None:
        self._file.write(data)
        self._file_size += len(data)
        self.bytes_written += len(data)

    def _append(self, item: bytes) -> None:
        if self._file is None or (
            self._file_size + len(item) > self.max_file_size and self.records_in_file
        ):
            self._open_next()
            self.records_in_file = 0
        self._write(item)
        self.records += 1
        self.records_in_file += 1

    def _run(self) -> None:
        """Write queued records; after the first failure, drain without writing."""
        while True:
            item = self._queue.get()
            try:
                if item is _STOP:
                    return
                if self.error is None:
                    self._append(item)
            except Exception as e:
                self.error = e
                logger.exception("Writing WARC record failed; later records are discarded")
            finally:
                self._queue.task_done()


@dataclass
class StoredRecord:
    offset: int
    record_type: str
    uri: str | None
    record_id: str | None
    date: str | None
    status: int | None = None
    headers: list[tuple[str, str]] = field(default_factory=list)
    body: bytes = b""
    content_digest: int | None = None
    is_duplicate: bool = False
    truncated: bool = False


def iter_members(data: bytes | mmap.mmap) -> Iterator[tuple[int, bytes | CorruptRecord]]:
    """Split concatenated gzip members, resynchronizing after damage."""
    pos = 0
    end = len(data)
    while pos < end:
        d = zlib.decompressobj(31)
        try:
            parts = []
            fed = pos
            while not d.eof and fed < end:
                chunk = data[fed : fed + READ_CHUNK]
                parts.append(d.decompress(chunk))
                fed += len(chunk)
            if not d.eof:
                raise zlib.error("truncated gzip member")
            member_end = fed - len(d.unused_data)
        except zlib.error as e:
            yield pos, CorruptRecord(str(e), pos)
            nxt = data.find(GZIP_MAGIC, pos + 1)
            if nxt < 0:
                return
            pos = nxt
            continue
        yield pos, b"".join(parts)
        pos = member_end


def _parse_member(offset: int, raw: bytes) -> Iterator[StoredRecord]:
    try:
        for record in ArchiveIterator(io.BytesIO(raw), check_digests=True):
            body = record.raw_stream.read()
            checker = getattr(record, "digest_checker", None)
            # A revisit names the original payload's digest but carries no payload.
            if (
                checker is not None
                and checker.passed is False
                and record.rec_type != "revisit"
            ):
                raise CorruptRecord(f"digest mismatch ({checker.problems})", offset)
            headers = record.rec_headers
            digest_value = headers.get_header(DIGEST_HEADER)
            http = record.http_headers
            yield StoredRecord(
                offset=offset,
                record_type=record.rec_type,
                uri=headers.get_header("WARC-Target-URI"),
                record_id=headers.get_header("WARC-Record-ID"),
                date=headers.get_header("WARC-Date"),
                status=int(http.get_statuscode()) if http is not None else None,
                headers=list(http.headers) if http is not None else [],
                body=body,
                content_digest=int(digest_value, 16) if digest_value else None,
                is_duplicate=headers.get_header(DUPLICATE_HEADER) == "true",
                truncated=headers.get_header("WARC-Truncated") is not None,
            )
    except ArchiveLoadFailed as e:
        raise CorruptRecord(str(e), offset) from e


def iterate(path: Path, skip_corrupt: bool = False) -> Iterator[StoredRecord]:
    """Yield the records of a store file in file order.

    Raises:
        CorruptRecord: On a damaged member, unless ``skip_corrupt`` is set,
            in which case it is logged and iteration resumes at the next
            member.
    """
    with open(path, "rb") as f:
        if f.seek(0, io.SEEK_END) == 0:
            return
        with mmap.mmap(f.fileno(), 0, access=mmap.ACCESS_READ) as data:
            for offset, member in iter_members(data):
                try:
                    if isinstance(member, CorruptRecord):
                        raise member
                    yield from _parse_member(offset, member)
                except CorruptRecord as e:
                    if not skip_corrupt:
                        raise
                    logger.warning("Skipping corrupt record in %s: %s", path, e)


__all__ = [
    "CorruptRecord",
    "DIGEST_HEADER",
    "DUPLICATE_HEADER",
    "StoreFailed",
    "StoredRecord",
    "WarcStore",
    "build_record",
    "iter_members",
    "iterate",
]
