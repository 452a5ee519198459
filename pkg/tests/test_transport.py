"""Tests for the in-process synthetic web transport."""

import pytest
import requests

from hostwise.harness.audit import RequestTrace
from hostwise.harness.spec import SyntheticWebSpec
from hostwise.harness.synthweb import host_name, page, synthetic_ip
from hostwise.harness.transport import SyntheticAdapter, synthetic_session


@pytest.fixture
def spec() -> SyntheticWebSpec:
    return SyntheticWebSpec(host_count=5, ip_count=2, delay_ms_min=5, delay_ms_max=5)


def test_serves_pages(spec) -> None:
    trace = RequestTrace()
    slept: list[float] = []
    session = synthetic_session(SyntheticAdapter(spec, trace, sleep=slept.append))
    host = host_name(spec, 1)

    response = session.get(f"http://{host}/page/2")
    assert response.status_code == 200
    assert response.content == page(spec, host, "/page/2")
    assert response.headers["content-type"] == "text/html; charset=utf-8"
    assert response.headers["Server"] == "hostwise-synthweb"
    assert slept == [0.005]

    event = trace.events[0]
    assert (event.host, event.ip, event.path) == (host, synthetic_ip(spec, host), "/page/2")


def test_not_found_and_https(spec) -> None:
    session = synthetic_session(SyntheticAdapter(spec, apply_delays=False))
    assert session.get(f"https://{host_name(spec, 0)}/missing").status_code == 404
    assert session.get("http://unknown.test/").status_code == 404


def test_query_is_forwarded(spec) -> None:
    trace = RequestTrace()
    session = synthetic_session(SyntheticAdapter(spec, trace, apply_delays=False))
    session.get(f"http://{host_name(spec, 0)}/page/1?a=b")
    assert trace.events[0].path == "/page/1?a=b"


def test_streamed_body(spec) -> None:
    session = synthetic_session(SyntheticAdapter(spec, apply_delays=False))
    host = host_name(spec, 0)
    with session.get(f"http://{host}/", stream=True) as response:
        body = b"".join(response.iter_content(1024))
    assert body == page(spec, host, "/")


def test_reset_raises_connection_error() -> None:
    spec = SyntheticWebSpec(reset_rate=1.0)
    session = synthetic_session(SyntheticAdapter(spec, apply_delays=False))
    with pytest.raises(requests.ConnectionError):
        session.get(f"http://{host_name(spec, 0)}/page/1")
