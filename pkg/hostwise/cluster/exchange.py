"""Best-effort URL exchange between agents over UDP.

Datagram layout (big-endian)::

    magic "HWX" | version u8 | count u16 | count x (length u16 | canonical URL bytes)

A URL is never split across datagrams.  Lost datagrams are not resent.
"""

from __future__ import annotations

import logging
import socket
import struct
import threading
from collections.abc import Callable, Iterable

from hostwise.core import burl
from hostwise.core.burl import CrawlUrl, UrlError

logger = logging.getLogger(__name__)

MAGIC = b"HWX"
VERSION = 1
HEADER = struct.Struct(">3sBH")
LENGTH = struct.Struct(">H")
DEFAULT_DATAGRAM_SIZE = 1400


class DatagramError(ValueError):
    """A datagram (or a URL for one) violates the wire format."""


def encode_batch(urls: Iterable[CrawlUrl], limit: int = DEFAULT_DATAGRAM_SIZE) -> list[bytes]:
    """Pack URLs into as few datagrams of at most ``limit`` bytes as possible.

    Raises:
        DatagramError: If a single URL cannot fit in a datagram.
    """
    datagrams: list[bytes] = []
    entries: list[bytes] = []
    size = HEADER.size

    def emit() -> None:
        datagrams.append(HEADER.pack(MAGIC, VERSION, len(entries)) + b"".join(entries))

    for url in urls:
        data = bytes(url)
        entry = LENGTH.pack(len(data)) + data if len(data) <= 0xFFFF else b""
        if not entry or HEADER.size + len(entry) > limit:
            raise DatagramError(f"URL of {len(data)} bytes does not fit a {limit}-byte datagram")
        if size + len(entry) > limit or len(entries) == 0xFFFF:
            emit()
            entries, size = [], HEADER.size
        entries.append(entry)
        size += len(entry)
    if entries:
        emit()
    return datagrams


def decode_datagram(datagram: bytes) -> list[CrawlUrl]:
    """Parse one datagram.

    Raises:
        DatagramError: On bad magic, version, lengths or URL bytes.
    """
    if len(datagram) < HEADER.size:
        raise DatagramError("datagram shorter than its header")
    magic, version, count = HEADER.unpack_from(datagram)
    if magic != MAGIC:
        raise DatagramError(f"bad magic {magic!r}")
    if version != VERSION:
        raise DatagramError(f"unsupported version {version}")
    urls: list[CrawlUrl] = []
    pos = HEADER.size
    for _ in range(count):
        if pos + LENGTH.size > len(datagram):
            raise DatagramError("truncated length field")
        (length,) = LENGTH.unpack_from(datagram, pos)
        pos += LENGTH.size
        if pos + length > len(datagram):
            raise DatagramError("truncated URL")
        try:
            urls.append(burl.parse(datagram[pos : pos + length].decode("ascii")))
        except (UnicodeDecodeError, UrlError) as e:
            raise DatagramError(f"bad URL at byte {pos}: {e}") from e
        pos += length
    if pos != len(datagram):
        raise DatagramError(f"{len(datagram) - pos} trailing bytes")
    return urls


def parse_address(address: str) -> tuple[str, int]:
    host, _, port = address.rpartition(":")
    if not host or not port.isdigit():
        raise ValueError(f"expected host:port, got {address!r}")
    return host, int(port)


class DatagramSender(threading.Thread):
    """Batches URLs per destination; flushes when full or every interval."""

    def __init__(
        self,
        addresses: dict[str, tuple[str, int]],
        datagram_size: int = DEFAULT_DATAGRAM_SIZE,
        flush_interval_ms: int = 50,
        sock: socket.socket | None = None,
    ) -> None:
        super().__init__(name="datagram-sender", daemon=True)
        self.addresses = dict(addresses)
        self.datagram_size = datagram_size
        self.flush_interval = flush_interval_ms / 1000
        self.sock = sock or socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        self._pending: dict[str, list[CrawlUrl]] = {}
        self._sizes: dict[str, int] = {}
        self._lock = threading.Lock()
        self._stop_event = threading.Event()
        self.urls_sent = 0
        self.datagrams_sent = 0
        self.send_errors = 0

    def send(self, agent_id: str, url: CrawlUrl) -> None:
        if agent_id not in self.addresses:
            raise KeyError(f"unknown agent {agent_id!r}")
        entry_size = LENGTH.size + len(bytes(url))
        with self._lock:
            size = self._sizes.get(agent_id, HEADER.size)
            if size + entry_size > self.datagram_size and self._pending.get(agent_id):
                self._flush_locked(agent_id)
                size = HEADER.size
            self._pending.setdefault(agent_id, []).append(url)
            self._sizes[agent_id] = size + entry_size

    def flush(self) -> None:
        with self._lock:
            for agent_id in list(self._pending):
                self._flush_locked(agent_id)

    def _flush_locked(self, agent_id: str) -> None:
        urls = self._pending.pop(agent_id, [])
        self._sizes.pop(agent_id, None)
        if not urls:
            return
        try:
            datagrams = encode_batch(urls, self.datagram_size)
        except DatagramError as e:
            logger.warning("Dropping batch for %s: %s", agent_id, e)
            return
        address = self.addresses[agent_id]
        for datagram in datagrams:
            try:
                self.sock.sendto(datagram, address)
                self.datagrams_sent += 1
            except OSError as e:
                self.send_errors += 1
                logger.debug("Datagram to %s lost: %s", agent_id, e)
        self.urls_sent += len(urls)

    def stop(self) -> None:
        self._stop_event.set()

    def run(self) -> None:
        while not self._stop_event.wait(self.flush_interval):
            self.flush()
        self.flush()
        self.sock.close()


class DatagramReceiver(threading.Thread):
    """Reads datagrams from the agent's UDP socket and hands each URL on."""

    def __init__(
        self,
        address: tuple[str, int],
        on_url: Callable[[CrawlUrl], None],
        buffer_size: int = 65_535,
    ) -> None:
        super().__init__(name="datagram-receiver", daemon=True)
        self.on_url = on_url
        self.buffer_size = buffer_size
        self.sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        self.sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self.sock.bind(address)
        self.sock.settimeout(0.2)
        self._stop_event = threading.Event()
        self.datagrams = 0
        self.urls = 0
        self.bad_datagrams = 0

    @property
    def address(self) -> tuple[str, int]:
        return self.sock.getsockname()

    def stop(self) -> None:
        self._stop_event.set()

    def handle(self, datagram: bytes) -> int:
        try:
            urls = decode_datagram(datagram)
        except DatagramError as e:
            self.bad_datagrams += 1
            logger.debug("Ignoring bad datagram: %s", e)
            return 0
        self.datagrams += 1
        for url in urls:
            self.on_url(url)
        self.urls += len(urls)
        return len(urls)

    def run(self) -> None:
        try:
            while not self._stop_event.is_set():
                try:
                    datagram, _ = self.sock.recvfrom(self.buffer_size)
                except socket.timeout:
                    continue
                except OSError:
                    if self._stop_event.is_set():
                        break
                    raise
                try:
                    self.handle(datagram)
                except Exception:
                    logger.exception("Failed handling datagram")
        finally:
            self.sock.close()


__all__ = [
    "DatagramError",
    "DatagramReceiver",
    "DatagramSender",
    "decode_datagram",
    "encode_batch",
    "parse_address",
]
