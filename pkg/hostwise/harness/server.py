"""HTTP server for the synthetic web.

The crawler reaches every synthetic host through this one server, used as
an HTTP proxy (``fetch.proxy = "http://127.0.0.1:8399"``): requests then
carry absolute-form targets (``GET http://h00001.synthweb.test/ HTTP/1.1``)
and the host is taken from the target or the Host header.
"""

from __future__ import annotations

import asyncio
import logging
import threading
import time
from collections.abc import AsyncIterator
from contextlib import asynccontextmanager
from pathlib import Path
from urllib.parse import urlsplit

import aiofiles
import uvicorn
from fastapi import FastAPI, Request
from fastapi.responses import Response, StreamingResponse

from hostwise.harness.audit import RequestTrace, TraceEvent
from hostwise.harness.spec import SyntheticWebSpec
from hostwise.harness.synthweb import respond, synthetic_ip

logger = logging.getLogger(__name__)

RESET_PREFIX = 512


class ConnectionReset(ConnectionError):
    """Raised mid-body to cut a response short."""


class AbsoluteFormMiddleware:
    """Rewrite proxy-style absolute request targets into origin form.

    Some HTTP parsers hand the full ``http://host/path`` target to the
    application as the path; this moves the authority into the Host header.
    """

    def __init__(self, app) -> None:
        self.app = app

    async def __call__(self, scope, receive, send) -> None:
        if scope["type"] == "http" and "://" in scope.get("path", ""):
            target = urlsplit(scope["path"])
            scope = dict(scope)
            scope["path"] = target.path or "/"
            scope["raw_path"] = scope["path"].encode("latin-1")
            if target.query and not scope.get("query_string"):
                scope["query_string"] = target.query.encode("latin-1")
            headers = [(k, v) for k, v in scope["headers"] if k != b"host"]
            headers.append((b"host", target.netloc.encode("latin-1")))
            scope["headers"] = headers
        await self.app(scope, receive, send)


async def _write_trace(queue: asyncio.Queue[TraceEvent | None], path: Path) -> None:
    async with aiofiles.open(path, "a", encoding="utf-8") as f:
        while True:
            event = await queue.get()
            if event is None:
                break
            lines = [event.to_json()]
            while not queue.empty():
                queued = queue.get_nowait()
                if queued is None:
                    await f.write("\n".join(lines) + "\n")
                    return
                lines.append(queued.to_json())
            await f.write("\n".join(lines) + "\n")
            await f.flush()


def create_app(spec: SyntheticWebSpec, trace: RequestTrace | None = None) -> FastAPI:
    """Build the synthetic web application.

    Every request is recorded in ``trace`` (and appended to
    ``spec.trace_file`` while the app's lifespan is running).
    """
    trace = trace if trace is not None else RequestTrace()
    slots = asyncio.Semaphore(spec.concurrency)

    @asynccontextmanager
    async def lifespan(app: FastAPI) -> AsyncIterator[None]:
        writer = None
        if spec.trace_file is not None:
            Path(spec.trace_file).parent.mkdir(parents=True, exist_ok=True)
            app.state.trace_queue = asyncio.Queue()
            writer = asyncio.create_task(_write_trace(app.state.trace_queue, spec.trace_file))
            logger.info("Writing request trace to %s", spec.trace_file)
        try:
            yield
        finally:
            if writer is not None:
                app.state.trace_queue.put_nowait(None)
                await writer
                app.state.trace_queue = None

    app = FastAPI(title="hostwise synthetic web", lifespan=lifespan)
    app.state.spec = spec
    app.state.trace = trace
    app.state.trace_queue = None
    app.state.in_flight = 0

    @app.get("/{path:path}")
    async def synthetic_page(path: str, request: Request) -> Response:
        host = (request.headers.get("host") or "").split(":", 1)[0].lower()
        target = "/" + path
        if request.url.query:
            target += "?" + request.url.query
        async with slots:
            app.state.in_flight += 1
            try:
                now_ms = time.time_ns() // 1_000_000
                event = TraceEvent(now_ms, host, synthetic_ip(spec, host), target)
                trace.record(event.t_ms, event.host, event.ip, event.path)
                if app.state.trace_queue is not None:
                    app.state.trace_queue.put_nowait(event)
                answer = respond(spec, host, target)
                if answer.delay_ms:
                    await asyncio.sleep(answer.delay_ms / 1000)
            finally:
                app.state.in_flight -= 1

        headers = {"Server": "hostwise-synthweb", **answer.headers}
        if answer.reset:
            body = answer.body

            async def cut_short() -> AsyncIterator[bytes]:
                yield body[:RESET_PREFIX]
                raise ConnectionReset(f"reset {host}{target}")

            return StreamingResponse(
                cut_short(),
                status_code=answer.status,
                media_type=answer.content_type,
                headers=headers,
            )
        return Response(
            answer.body, status_code=answer.status, media_type=answer.content_type, headers=headers
        )

    return app


def build_server(spec: SyntheticWebSpec, trace: RequestTrace | None = None) -> uvicorn.Server:
    app = AbsoluteFormMiddleware(create_app(spec, trace))
    config = uvicorn.Config(
        app,
        host=spec.host,
        port=spec.port,
        log_level="warning",
        access_log=False,
        backlog=max(2048, spec.concurrency * 2),
        timeout_keep_alive=30,
    )
    return uvicorn.Server(config)


def serve(spec: SyntheticWebSpec) -> None:
    """Run the synthetic web in the foreground until interrupted."""
    logger.info(
        "Serving %d synthetic hosts on %s:%d (seed %d)",
        spec.host_count,
        spec.host,
        spec.port,
        spec.seed,
    )
    build_server(spec).run()


class ServerThread(threading.Thread):
    """The synthetic web on a background thread, for in-process experiments."""

    def __init__(self, spec: SyntheticWebSpec, trace: RequestTrace | None = None) -> None:
        super().__init__(name="synthweb", daemon=True)
        self.trace = trace if trace is not None else RequestTrace()
        self.server = build_server(spec, self.trace)
        self.spec = spec

    @property
    def port(self) -> int:
        servers = getattr(self.server, "servers", [])
        for server in servers:
            for sock in server.sockets:
                return sock.getsockname()[1]
        return self.spec.port

    @property
    def proxy_url(self) -> str:
        return f"http://{self.spec.host}:{self.port}"

    def run(self) -> None:
        self.server.run()

    def start_and_wait(self, timeout: float = 10.0) -> None:
        """Start serving and block until the socket accepts connections.

        Raises:
            TimeoutError: If the server did not come up in time.
        """
        self.start()
        deadline = time.monotonic() + timeout
        while not self.server.started:
            if not self.is_alive() or time.monotonic() > deadline:
                raise TimeoutError(f"synthetic web did not start on port {self.spec.port}")
            time.sleep(0.05)

    def stop(self, timeout: float = 10.0) -> None:
        self.server.should_exit = True
        self.join(timeout)


__all__ = [
    "AbsoluteFormMiddleware",
    "ConnectionReset",
    "ServerThread",
    "build_server",
    "create_app",
    "serve",
]
