"""Tests for the deterministic synthetic web model."""

import pytest

from hostwise.harness.spec import SyntheticWebSpec
from hostwise.harness.synthweb import (
    NotFound,
    canonical_id,
    host_bfs_order,
    host_index,
    host_name,
    links,
    page,
    page_count,
    page_number,
    page_path,
    reachable_archetypes,
    respond,
    synthetic_ip,
)
from hostwise.pipeline.digest import digest

HTML = "text/html; charset=utf-8"


@pytest.fixture
def spec() -> SyntheticWebSpec:
    return SyntheticWebSpec(seed=7, host_count=20, ip_count=4, pages_min=20, pages_max=60)


class TestNaming:
    """Host names, page paths and addresses."""

    def test_host_index_round_trip(self, spec) -> None:
        for i in (0, 5, 19):
            assert host_index(spec, host_name(spec, i)) == i
        assert host_index(spec, "H00003.SYNTHWEB.TEST:80") == 3

    @pytest.mark.parametrize("host", ["h00020.synthweb.test", "h00001.other.test", "example.com"])
    def test_unknown_hosts(self, spec, host) -> None:
        with pytest.raises(NotFound):
            host_index(spec, host)

    def test_page_numbers(self) -> None:
        assert page_number("/") == 0
        assert page_number("/page/12?x=1") == 12
        assert page_path(0) == "/"
        assert page_path(3) == "/page/3"
        with pytest.raises(NotFound):
            page_number("/other")

    def test_ips_are_shared(self, spec) -> None:
        ips = {synthetic_ip(spec, host_name(spec, i)) for i in range(spec.host_count)}
        assert len(ips) == spec.ip_count
        assert synthetic_ip(spec, host_name(spec, 1)) == synthetic_ip(spec, host_name(spec, 5))
        assert synthetic_ip(spec, "elsewhere.test") == synthetic_ip(spec, "ELSEWHERE.test")


class TestPages:
    """Page content and link structure."""

    def test_deterministic(self, spec) -> None:
        host = host_name(spec, 2)
        assert page(spec, host, "/page/4") == page(spec, host, "/page/4")
        other = SyntheticWebSpec(seed=8, host_count=20, ip_count=4, pages_min=20, pages_max=60)
        assert page(spec, host, "/") != page(other, host, "/")

    def test_out_of_range_page(self, spec) -> None:
        host = host_name(spec, 0)
        with pytest.raises(NotFound):
            page(spec, host, page_path(page_count(spec, 0)))

    def test_page_size_lower_bound(self, spec) -> None:
        host = host_name(spec, 1)
        assert len(page(spec, host, "/")) >= spec.page_size_min

    def test_links_start_with_navigation(self, spec) -> None:
        out = links(spec, 0, 0)
        assert out[:3] == ["/", "/page/1", "/page/2"]

    def test_external_links_point_elsewhere(self) -> None:
        spec = SyntheticWebSpec(
            host_count=5, external_fraction=1.0, outdegree_min=3, outdegree_max=3
        )
        for i in range(5):
            external = [h for h in links(spec, i, 0) if h.startswith("http://")]
            assert len(external) == 3
            assert all(host_name(spec, i) not in h for h in external)

    def test_bfs_reaches_every_page(self, spec) -> None:
        host = host_name(spec, 3)
        order = host_bfs_order(spec, host)
        n = page_count(spec, 3)
        assert order[0] == "/"
        assert sorted(order, key=page_number) == [page_path(k) for k in range(n)]
        assert len(host_bfs_order(spec, host, limit=5)) == 5


class TestRespond:
    """HTTP answers of the model."""

    def test_page_and_not_found(self, spec) -> None:
        host = host_name(spec, 0)
        assert respond(spec, host, "/").status == 200
        assert respond(spec, host, "/nowhere").status == 404
        assert respond(spec, "unknown.test", "/").status == 404

    def test_robots(self) -> None:
        spec = SyntheticWebSpec(robots_disallow=["/page/1", "/page/2"])
        answer = respond(spec, host_name(spec, 0), "/robots.txt")
        assert answer.status == 200
        assert answer.content_type == "text/plain"
        assert answer.body == b"User-agent: *\nDisallow: /page/1\nDisallow: /page/2\n"
        assert respond(spec, "unknown.test", "/robots.txt").status == 404

    def test_resets(self) -> None:
        spec = SyntheticWebSpec(reset_rate=1.0)
        host = host_name(spec, 0)
        assert respond(spec, host, "/page/1").reset
        assert not respond(spec, host, "/").reset

    def test_server_errors(self) -> None:
        spec = SyntheticWebSpec(server_error_rate=1.0)
        assert respond(spec, host_name(spec, 0), "/page/1").status == 503

    def test_malformed(self) -> None:
        spec = SyntheticWebSpec(malformed_rate=1.0)
        host = host_name(spec, 0)
        answer = respond(spec, host, "/page/1")
        assert answer.status == 200
        assert answer.body != page(spec, host, "/page/1")
        assert answer.body.endswith(b"<div")

    def test_errors_are_deterministic(self) -> None:
        spec = SyntheticWebSpec(server_error_rate=0.3, reset_rate=0.2)
        host = host_name(spec, 4)
        first = [respond(spec, host, f"/page/{k}") for k in range(1, 40)]
        again = [respond(spec, host, f"/page/{k}") for k in range(1, 40)]
        assert first == again
        assert any(a.status == 503 for a in first)
        assert any(a.reset for a in first)

    def test_delays_in_range(self) -> None:
        spec = SyntheticWebSpec(delay_ms_min=10, delay_ms_max=20)
        for k in range(1, 10):
            assert 10 <= respond(spec, host_name(spec, 0), f"/page/{k}").delay_ms <= 20


class TestNearDuplicates:
    """Copies of a host's root page differ only in counters and dates."""

    def test_copies_share_a_digest(self) -> None:
        spec = SyntheticWebSpec(host_count=3, near_duplicate_fraction=1.0)
        host = host_name(spec, 1)
        root = page(spec, host, "/")
        copy = page(spec, host, "/page/3")
        assert root != copy
        assert digest(root, HTML) == digest(copy, HTML)
        assert canonical_id(spec, host, "/page/3") == (1, 0)

    def test_archetypes_without_copies(self, spec) -> None:
        expected = sum(page_count(spec, i) for i in range(spec.host_count))
        assert len(reachable_archetypes(spec)) == expected

    def test_archetypes_with_copies_only(self) -> None:
        spec = SyntheticWebSpec(host_count=4, near_duplicate_fraction=1.0)
        assert reachable_archetypes(spec) == {(i, 0) for i in range(4)}


class TestSpecValidation:
    """Test suite for SyntheticWebSpec."""

    def test_ranges(self) -> None:
        with pytest.raises(ValueError):
            SyntheticWebSpec(pages_min=10, pages_max=5)
        with pytest.raises(ValueError):
            SyntheticWebSpec(reset_rate=0.6, server_error_rate=0.6)

    def test_load_table_or_top_level(self, tmp_path) -> None:
        table = tmp_path / "a.toml"
        table.write_text("[synthetic]\nhost_count = 7\n")
        flat = tmp_path / "b.toml"
        flat.write_text("host_count = 9\nseed = 3\n")
        assert SyntheticWebSpec.load(table).host_count == 7
        assert SyntheticWebSpec.load(flat).seed == 3
