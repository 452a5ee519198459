"""Runtime control plane.

A registry of named values (metrics and configuration), some of which can
be changed while the agent runs, served over a local TCP socket speaking
newline-delimited text::

    GET <key>          -> OK <json value>
    SET <key> <value>  -> OK <json value as applied>
    STATS              -> OK <json object of every metric>
    KEYS               -> OK <json list of keys>

Failures are answered with ``ERR <message>`` and never close the
connection.
"""

from __future__ import annotations

import asyncio
import json
import logging
import socket
import threading
from collections.abc import Callable, Mapping
from dataclasses import dataclass
from typing import Any

logger = logging.getLogger(__name__)

MAX_LINE = 64 * 1024


class UnknownKey(KeyError):
    """No control key with this name."""


class ImmutableKey(PermissionError):
    """The key can be read but not changed at runtime."""


@dataclass(frozen=True)
class ControlKey:
    name: str
    getter: Callable[[], Any]
    setter: Callable[[Any], None] | None = None
    parse: Callable[[str], Any] = str

    @property
    def mutable(self) -> bool:
        return self.setter is not None


class ControlPlane:
    """Thread-safe registry of readable and settable keys.

    Stats providers contribute read-only keys in bulk; explicitly
    registered keys shadow provider keys of the same name.
    """

    def __init__(self) -> None:
        self._keys: dict[str, ControlKey] = {}
        self._providers: list[Callable[[], Mapping[str, Any]]] = []
        self._lock = threading.RLock()

    def register(
        self,
        name: str,
        getter: Callable[[], Any],
        setter: Callable[[Any], None] | None = None,
        parse: Callable[[str], Any] = str,
    ) -> None:
        with self._lock:
            self._keys[name] = ControlKey(name, getter, setter, parse)

    def register_values(self, values: Mapping[str, Any]) -> None:
        """Register constant read-only keys (e.g. the flattened configuration)."""
        for name, value in values.items():
            self.register(name, lambda value=value: value)

    def add_stats_provider(self, provider: Callable[[], Mapping[str, Any]]) -> None:
        with self._lock:
            self._providers.append(provider)

    def stats(self) -> dict[str, Any]:
        with self._lock:
            providers = list(self._providers)
        merged: dict[str, Any] = {}
        for provider in providers:
            merged.update(provider())
        return merged

    def keys(self) -> list[str]:
        with self._lock:
            names = set(self._keys)
        return sorted(names | set(self.stats()))

    def get(self, name: str) -> Any:
        """Current value of a key.

        Raises:
            UnknownKey: If neither a registered key nor a metric has this name.
        """
        with self._lock:
            key = self._keys.get(name)
        if key is not None:
            return key.getter()
        stats = self.stats()
        if name not in stats:
            raise UnknownKey(name)
        return stats[name]

    def set(self, name: str, text: str) -> Any:
        """Parse ``text`` for the key, apply it and return the new value.

        Raises:
            UnknownKey: If the key does not exist.
            ImmutableKey: If the key exists but is read-only.
            ValueError: If the value does not parse or is rejected.
        """
        with self._lock:
            key = self._keys.get(name)
            if key is None:
                if name in self.stats():
                    raise ImmutableKey(name)
                raise UnknownKey(name)
            if not key.mutable:
                raise ImmutableKey(name)
            value = key.parse(text)
            key.setter(value)
            applied = key.getter()
        logger.info("Control: %s set to %r", name, applied)
        return applied

    def execute(self, line: str) -> str:
        """Run one protocol command and return the response line."""
        parts = line.strip().split(None, 2)
        if not parts:
            return "ERR empty command"
        command = parts[0].upper()
        try:
            if command == "GET" and len(parts) == 2:
                return "OK " + _encode(self.get(parts[1]))
            if command == "SET" and len(parts) == 3:
                return "OK " + _encode(self.set(parts[1], parts[2]))
            if command == "STATS" and len(parts) == 1:
                return "OK " + _encode(self.stats())
            if command == "KEYS" and len(parts) == 1:
                return "OK " + _encode(self.keys())
        except UnknownKey as e:
            return f"ERR unknown key {e.args[0]}"
        except ImmutableKey as e:
            return f"ERR immutable key {e.args[0]}"
        except ValueError as e:
            return f"ERR bad value: {e}"
        except Exception as e:
            logger.exception("Control command %r failed", line)
            return f"ERR {type(e).__name__}: {e}"
        return f"ERR unknown command {line.strip()!r}"


def _encode(value: Any) -> str:
    return json.dumps(value, default=str, sort_keys=True)


def parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


class ControlServer(threading.Thread):
    """Serves a :class:`ControlPlane` on its own event loop thread."""

    def __init__(self, plane: ControlPlane, host: str = "127.0.0.1", port: int = 0) -> None:
        super().__init__(name="control-server", daemon=True)
        self.plane = plane
        self.host = host
        self.port = port
        self.ready = threading.Event()
        self.error: BaseException | None = None
        self._loop: asyncio.AbstractEventLoop | None = None
        self._stop_future: asyncio.Future[None] | None = None

    async def _handle(self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter) -> None:
        try:
            while True:
                line = await reader.readline()
                if not line:
                    break
                response = self.plane.execute(line.decode("utf-8", errors="replace"))
                writer.write(response.encode("utf-8") + b"\n")
                await writer.drain()
        except (ConnectionError, asyncio.LimitOverrunError, ValueError) as e:
            logger.debug("Control connection dropped: %s", e)
        finally:
            writer.close()

    async def _serve(self) -> None:
        server = await asyncio.start_server(self._handle, self.host, self.port, limit=MAX_LINE)
        self.port = server.sockets[0].getsockname()[1]
        self._stop_future = asyncio.get_running_loop().create_future()
        logger.info("Control plane listening on %s:%d", self.host, self.port)
        self.ready.set()
        async with server:
            await self._stop_future

    def run(self) -> None:
        self._loop = asyncio.new_event_loop()
        try:
            self._loop.run_until_complete(self._serve())
        except Exception as e:
            self.error = e
            logger.exception("Control server failed")
        finally:
            self.ready.set()
            self._loop.close()

    def start_and_wait(self, timeout: float = 5.0) -> None:
        """Start the thread and block until the socket is bound.

        Raises:
            OSError: If the server could not bind.
        """
        self.start()
        self.ready.wait(timeout)
        if self.error is not None:
            raise OSError(f"control server failed to start: {self.error}")

    def stop(self) -> None:
        loop, future = self._loop, self._stop_future
        if loop is not None and future is not None and not loop.is_closed():
            loop.call_soon_threadsafe(lambda: future.done() or future.set_result(None))


def send_command(host: str, port: int, command: str, timeout: float = 5.0) -> str:
    """Send one command to a control server and return its response line."""
    with socket.create_connection((host, port), timeout=timeout) as sock:
        sock.sendall(command.strip().encode("utf-8") + b"\n")
        with sock.makefile("rb") as reader:
            return reader.readline(MAX_LINE).decode("utf-8").rstrip("\n")


__all__ = [
    "ControlKey",
    "ControlPlane",
    "ControlServer",
    "ImmutableKey",
    "UnknownKey",
    "parse_bool",
    "send_command",
]
