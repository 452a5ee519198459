"""Tests for experiment sweeps."""

import json

import pytest

from hostwise.config import Config
from hostwise.harness import experiments
from hostwise.harness.experiments import (
    fit_line,
    run_sweep,
    sweep_points,
    synthetic_seeds,
    synthetic_web,
)
from hostwise.harness.spec import SyntheticWebSpec

SYNTHETIC = {"seed": 5, "host_count": 3, "pages_min": 5, "pages_max": 5}


def sweep_config(tmp_path, kind: str, **sweep) -> Config:
    return Config.model_validate(
        {
            "agent": {"name": "sweep", "data_dir": str(tmp_path)},
            "workbench": {"size": "1MB"},
            "sieve": {"size": "64KB"},
            "fetch": {"transport": "synthetic", "workers": 2},
            "parse": {"workers": 1},
            "dns": {"resolver": "synthetic", "workers": 1},
            "store": {"enabled": False},
            "synthetic": SYNTHETIC,
            "sweep": {"kind": kind, "duration_s": 0.6, "warmup_s": 0.2, **sweep},
        }
    )


def test_fit_line() -> None:
    fit = fit_line([1, 2, 3, 4], [3, 5, 7, 9])
    assert fit["slope"] == pytest.approx(2.0)
    assert fit["intercept"] == pytest.approx(1.0)
    assert fit["r2"] == pytest.approx(1.0)
    assert fit_line([1, 2], [4, 4])["r2"] == 1.0


def test_synthetic_seeds() -> None:
    spec = SyntheticWebSpec(host_count=2)
    assert synthetic_seeds(spec) == ["http://h00000.synthweb.test/", "http://h00001.synthweb.test/"]


def test_sweep_points(tmp_path) -> None:
    threads = sweep_config(tmp_path, "threads", workers=[1, 8])
    assert sweep_points(threads) == [
        ({"fetch_workers": 1}, {"fetch": {"workers": 1}}),
        ({"fetch_workers": 8}, {"fetch": {"workers": 8}}),
    ]
    politeness = sweep_config(tmp_path, "politeness", ip_delays_ms=[100], host_delay_factor=4)
    assert sweep_points(politeness) == [
        (
            {"ip_delay_ms": 100, "host_delay_ms": 400},
            {"politeness": {"ip_delay_ms": 100, "host_delay_ms": 400}},
        )
    ]


def test_sweep_window_is_validated(tmp_path) -> None:
    with pytest.raises(ValueError):
        sweep_config(tmp_path, "threads", warmup_s=1.0)


def test_synthetic_transport_needs_no_server(tmp_path) -> None:
    config = sweep_config(tmp_path, "threads")
    with synthetic_web(config, config.sweep) as served:
        assert served is config


def test_http_transport_gets_a_proxy(tmp_path) -> None:
    config = sweep_config(tmp_path, "threads")
    data = config.model_dump()
    data["fetch"]["transport"] = "http"
    data["synthetic"]["port"] = 0
    http_config = Config.model_validate(data)
    with synthetic_web(http_config, http_config.sweep) as served:
        assert served.fetch.proxy.startswith("http://127.0.0.1:")


def test_run_sweep_writes_rows_and_fit(tmp_path, monkeypatch) -> None:
    calls = []

    def fake_measure(config, sweep, seeds, trace=None, sleep=None):
        calls.append((config.fetch.workers, config.agent.data_dir, len(seeds)))
        return {"pages_per_s": 10.0 * config.fetch.workers, "avg_front_size": 1.0}

    monkeypatch.setattr(experiments, "measure", fake_measure)
    config = sweep_config(tmp_path, "threads", workers=[1, 2, 4])
    output = tmp_path / "out.jsonl"
    rows = run_sweep(config, output)

    assert [r["fetch_workers"] for r in rows] == [1, 2, 4]
    assert [c[2] for c in calls] == [3, 3, 3]
    assert len({c[1] for c in calls}) == 3
    lines = [json.loads(line) for line in output.read_text(encoding="utf-8").splitlines()]
    assert lines[-1]["fit"]["slope"] == pytest.approx(10.0)
    assert len(lines) == 4


@pytest.mark.integration
def test_measure_runs_an_agent(tmp_path) -> None:
    config = sweep_config(tmp_path, "threads")
    point = experiments._point_config(config, tmp_path / "point", {"fetch": {"workers": 2}})
    figures = experiments.measure(point, config.sweep, synthetic_seeds(point.synthetic))
    assert figures["pages"] > 0
    assert figures["pages_per_s"] >= 0
    assert figures["window_s"] >= 0.4
