"""In-process transport answering requests from the synthetic web model."""

from __future__ import annotations

import io
import threading
import time
from collections.abc import Callable
from http import HTTPStatus
from urllib.parse import urlsplit

import requests
from requests.adapters import BaseAdapter
from requests.structures import CaseInsensitiveDict
from requests.utils import get_encoding_from_headers

from hostwise.harness.audit import RequestTrace
from hostwise.harness.spec import SyntheticWebSpec
from hostwise.harness.synthweb import respond, synthetic_ip


class SyntheticAdapter(BaseAdapter):
    """A ``requests`` adapter serving the synthetic web without sockets.

    Mount it on a session for ``http://`` and ``https://``.  The per-request
    delay is slept in the calling thread and at most ``spec.concurrency``
    requests are answered at once, like the real server.
    """

    def __init__(
        self,
        spec: SyntheticWebSpec,
        trace: RequestTrace | None = None,
        sleep: Callable[[float], None] = time.sleep,
        apply_delays: bool = True,
    ) -> None:
        super().__init__()
        self.spec = spec
        self.trace = trace
        self.sleep = sleep
        self.apply_delays = apply_delays
        self._slots = threading.BoundedSemaphore(spec.concurrency)

    def send(self, request, stream=False, timeout=None, verify=True, cert=None, proxies=None):
        parts = urlsplit(request.url)
        host = (parts.hostname or "").lower()
        path = (parts.path or "/") + (f"?{parts.query}" if parts.query else "")
        with self._slots:
            if self.trace is not None:
                self.trace.record(
                    time.time_ns() // 1_000_000, host, synthetic_ip(self.spec, host), path
                )
            answer = respond(self.spec, host, path)
            if self.apply_delays and answer.delay_ms:
                self.sleep(answer.delay_ms / 1000)
        if answer.reset:
            raise requests.ConnectionError(f"connection reset by {host}", request=request)

        response = requests.Response()
        response.status_code = answer.status
        response.reason = HTTPStatus(answer.status).phrase
        response.headers = CaseInsensitiveDict(
            {
                "Content-Type": answer.content_type,
                "Content-Length": str(len(answer.body)),
                "Server": "hostwise-synthweb",
                **answer.headers,
            }
        )
        response.encoding = get_encoding_from_headers(response.headers)
        response.raw = io.BytesIO(answer.body)
        response.url = request.url
        response.request = request
        response.connection = self
        return response

    def close(self) -> None:
        pass


def synthetic_session(adapter: SyntheticAdapter) -> requests.Session:
    """A session whose requests all go to ``adapter`` (which may be shared)."""
    session = requests.Session()
    session.mount("http://", adapter)
    session.mount("https://", adapter)
    return session


__all__ = ["SyntheticAdapter", "synthetic_session"]
