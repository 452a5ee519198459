"""Tests for the hostwise command-line interface."""

from __future__ import annotations

import json
import subprocess
import sys
from pathlib import Path

import pytest
from click.testing import CliRunner

from hostwise import __version__
from hostwise.__main__ import cli
from hostwise.cluster.control import ControlPlane, ControlServer
from hostwise.core import burl
from hostwise.harness.audit import RequestTrace
from hostwise.pipeline.fetch_data import FetchData, SpillBuffer
from hostwise.store.warc import WarcStore
from hostwise.utils.persistence import setup_logging


@pytest.fixture(autouse=True)
def _isolate(tmp_path, monkeypatch):
    monkeypatch.setattr("hostwise.config.default_data_dir", lambda: tmp_path / "data")
    yield
    setup_logging("warning")


def write_trace(path: Path, gap_ms: int) -> Path:
    trace = RequestTrace()
    trace.record(0, "a.test", "10.0.0.1", "/robots.txt")
    trace.record(gap_ms, "a.test", "10.0.0.1", "/")
    trace.write(path)
    return path


def test_version_via_module() -> None:
    result = subprocess.run(
        [sys.executable, "-m", "hostwise", "--version"],
        capture_output=True,
        text=True,
        timeout=60,
    )
    assert result.returncode == 0
    assert __version__ in result.stdout


def test_help_lists_commands() -> None:
    result = CliRunner().invoke(cli, [])
    assert result.exit_code == 0
    for command in ("crawl", "synthweb", "audit", "warc-cat", "control", "sweep"):
        assert command in result.output


class TestAudit:
    """Tests for the audit command."""

    def test_clean_trace(self, tmp_path) -> None:
        trace = write_trace(tmp_path / "ok.jsonl", 500)
        result = CliRunner().invoke(
            cli, ["audit", "--trace", str(trace), "--host-delay", "400", "--ip-delay", "100"]
        )
        assert result.exit_code == 0
        assert json.loads(result.output)["host_violations"] == 0

    def test_violations_fail(self, tmp_path) -> None:
        trace = write_trace(tmp_path / "bad.jsonl", 50)
        result = CliRunner().invoke(
            cli, ["audit", "--trace", str(trace), "--host-delay", "400", "--ip-delay", "0"]
        )
        assert result.exit_code == 1
        assert "violation host a.test: 50 ms < 400 ms at 50" in result.output

    def test_unreadable_trace(self, tmp_path) -> None:
        bad = tmp_path / "bad.jsonl"
        bad.write_text("{not json\n", encoding="utf-8")
        result = CliRunner().invoke(
            cli, ["audit", "--trace", str(bad), "--host-delay", "1", "--ip-delay", "1"]
        )
        assert result.exit_code == 1
        assert "cannot read trace" in result.output


def test_warc_cat(tmp_path) -> None:
    body = SpillBuffer()
    body.append(b"<p>hi</p>")
    fd = FetchData(
        url=burl.parse("http://a.test/"),
        body=body,
        status=200,
        headers=[("Content-Type", "text/html")],
    )
    with WarcStore(tmp_path / "store") as store:
        store.store(fd, 0x1F, False)
    result = CliRunner().invoke(cli, ["warc-cat", str(store.files[0])])
    assert result.exit_code == 0
    lines = [line.split("\t") for line in result.output.splitlines()]
    assert [line[1] for line in lines] == ["warcinfo", "response"]
    assert lines[1][2:] == ["200", "http://a.test/", f"{0x1F:032x}", "new"]


def test_control_command() -> None:
    plane = ControlPlane()
    plane.register("delay_ms", lambda: 1000)
    server = ControlServer(plane)
    server.start_and_wait()
    try:
        runner = CliRunner()
        ok = runner.invoke(cli, ["control", "--port", str(server.port), "GET", "delay_ms"])
        assert ok.exit_code == 0
        assert ok.output.strip() == "1000"
        refused = runner.invoke(
            cli, ["control", "--port", str(server.port), "SET", "delay_ms", "5"]
        )
        assert refused.exit_code == 1
        assert "immutable key delay_ms" in refused.output
    finally:
        server.stop()
        server.join(5)


def test_invalid_config(tmp_path) -> None:
    path = tmp_path / "bad.toml"
    path.write_text("[fetch]\nworkers = -1\n", encoding="utf-8")
    result = CliRunner().invoke(cli, ["crawl", "--config", str(path)])
    assert result.exit_code == 1
    assert "fetch.workers" in result.output


def test_sweep_requires_section(tmp_path) -> None:
    path = tmp_path / "plain.toml"
    path.write_text('[agent]\nname = "x"\n', encoding="utf-8")
    result = CliRunner().invoke(cli, ["sweep", "--config", str(path)])
    assert result.exit_code == 1
    assert "no [sweep] section" in result.output


def test_synthweb_rejects_bad_spec(tmp_path) -> None:
    path = tmp_path / "spec.toml"
    path.write_text("[synthetic]\npages_min = 10\npages_max = 5\n", encoding="utf-8")
    result = CliRunner().invoke(cli, ["synthweb", "--spec", str(path)])
    assert result.exit_code == 1
    assert "invalid synthetic web spec" in result.output


@pytest.mark.integration
def test_crawl_synthetic_web(tmp_path) -> None:
    seeds = tmp_path / "seeds.txt"
    seeds.write_text(
        "http://h00000.synthweb.test/\nhttp://h00001.synthweb.test/\n", encoding="utf-8"
    )
    config = tmp_path / "crawl.toml"
    config.write_text(
        f"""
[agent]
name = "cli"
data_dir = "{tmp_path / 'data'}"
idle_shutdown_s = 0.5

[workbench]
size = "1MB"

[sieve]
size = "64KB"

[politeness]
host_delay_ms = 0
ip_delay_ms = 0

[fetch]
workers = 2
transport = "synthetic"

[parse]
workers = 1

[dns]
workers = 1
resolver = "synthetic"

[synthetic]
host_count = 2
pages_min = 5
pages_max = 5
""",
        encoding="utf-8",
    )
    result = CliRunner().invoke(
        cli, ["crawl", "--config", str(config), "--seed-urls", str(seeds), "--duration", "60"]
    )
    assert result.exit_code == 0, result.output
    assert "idle: 10 pages" in result.output
    assert (tmp_path / "data" / "logs" / "cli.log").exists()
