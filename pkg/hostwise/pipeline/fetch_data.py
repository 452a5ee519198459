"""Fetched responses and their spill-to-disk body buffers."""

from __future__ import annotations

import tempfile
import threading
from collections.abc import Iterator
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, TYPE_CHECKING

from hostwise.core.burl import CrawlUrl

if TYPE_CHECKING:
    from hostwise.frontier.workbench import VisitState

READ_CHUNK = 64 * 1024


class SpillBuffer:
    """Keeps the first ``window`` bytes in memory and the rest in a temp file.

    A fetch worker owns one buffer and reuses it for every response, so the
    memory used per worker is constant.
    """

    def __init__(self, window: int = 64 * 1024, spill_dir: Path | None = None) -> None:
        self.window = window
        self.spill_dir = spill_dir
        self._memory = bytearray()
        self._spill: IO[bytes] | None = None
        self._size = 0

    def append(self, data: bytes) -> None:
        if not data:
            return
        room = self.window - len(self._memory)
        if room > 0:
            self._memory.extend(data[:room])
            data = data[room:]
        if data:
            if self._spill is None:
                self._spill = tempfile.TemporaryFile(
                    dir=self.spill_dir, prefix="hostwise-body-"
                )
            self._spill.write(data)
        self._size = len(self._memory) + (self._spill.tell() if self._spill else 0)

    @property
    def size(self) -> int:
        return self._size

    @property
    def spilled(self) -> bool:
        return self._spill is not None and self._spill.tell() > 0

    def chunks(self) -> Iterator[bytes]:
        """Yield the content from the start; may be called repeatedly."""
        if self._memory:
            yield bytes(self._memory)
        if self._spill is not None:
            end = self._spill.tell()
            self._spill.seek(0)
            try:
                remaining = end
                while remaining > 0:
                    chunk = self._spill.read(min(READ_CHUNK, remaining))
                    if not chunk:
                        break
                    remaining -= len(chunk)
                    yield chunk
            finally:
                self._spill.seek(end)

    def getvalue(self) -> bytes:
        return b"".join(self.chunks())

    def clear(self) -> None:
        self._memory.clear()
        if self._spill is not None:
            self._spill.seek(0)
            self._spill.truncate()
        self._size = 0

    def close(self) -> None:
        self.clear()
        if self._spill is not None:
            self._spill.close()
            self._spill = None


@dataclass(eq=False)
class FetchData:
    """One fetched response, handed from a fetch worker to a parse worker."""

    url: CrawlUrl
    body: SpillBuffer
    status: int = 0
    headers: list[tuple[str, str]] = field(default_factory=list)
    fetch_start: int = 0
    fetch_end: int = 0
    error: str | None = None
    truncated: bool = False
    is_robots: bool = False
    state: "VisitState | None" = None
    digest: int | None = None
    is_duplicate: bool = False
    parsed: threading.Event = field(default_factory=threading.Event, repr=False)

    def header(self, name: str) -> str | None:
        lowered = name.lower()
        for key, value in self.headers:
            if key.lower() == lowered:
                return value
        return None

    @property
    def content_type(self) -> str | None:
        return self.header("content-type")

    @property
    def content(self) -> bytes:
        return self.body.getvalue()

    def reset(self, url: CrawlUrl) -> None:
        """Reuse this object (and its buffer) for another request."""
        self.url = url
        self.body.clear()
        self.status = 0
        self.headers = []
        self.fetch_start = self.fetch_end = 0
        self.error = None
        self.truncated = False
        self.is_robots = False
        self.digest = None
        self.is_duplicate = False
        self.parsed.clear()

    def done_parsing(self) -> None:
        self.parsed.set()


__all__ = ["FetchData", "SpillBuffer"]
