"""Experiment sweeps against the synthetic web.

Each point of a sweep runs a fresh agent (fresh data directory) for
``sweep.duration_s`` seconds and measures throughput and front size over
the window after ``sweep.warmup_s``.
"""

from __future__ import annotations

import logging
import tempfile
import time
from collections.abc import Callable, Iterator
from contextlib import contextmanager
from pathlib import Path
from typing import Any

import numpy as np

from hostwise.agent.agent import CrawlAgent
from hostwise.config import Config, SweepConfig
from hostwise.harness.audit import RequestTrace
from hostwise.harness.server import ServerThread
from hostwise.harness.spec import SyntheticWebSpec
from hostwise.harness.synthweb import host_name
from hostwise.utils.persistence import append_jsonl

logger = logging.getLogger(__name__)


def synthetic_seeds(spec: SyntheticWebSpec) -> list[str]:
    """Root page of every synthetic host."""
    return [f"http://{host_name(spec, i)}/" for i in range(spec.host_count)]


def fit_line(xs: list[float], ys: list[float]) -> dict[str, float]:
    """Least-squares line through the points with its coefficient of determination."""
    x = np.asarray(xs, dtype=float)
    y = np.asarray(ys, dtype=float)
    slope, intercept = np.polyfit(x, y, 1)
    residual = float(np.sum((y - (slope * x + intercept)) ** 2))
    total = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - residual / total if total else 1.0
    return {"slope": float(slope), "intercept": float(intercept), "r2": r2}


def _point_config(base: Config, data_dir: Path, updates: dict[str, dict[str, Any]]) -> Config:
    data = base.model_dump()
    data["sweep"] = None
    data["control"]["enabled"] = False
    data["agent"]["data_dir"] = data_dir
    for section in ("sieve", "virtualizer", "store"):
        data[section]["directory"] = None
    for section, values in updates.items():
        data[section].update(values)
    return Config.model_validate(data)


@contextmanager
def synthetic_web(config: Config, sweep: SweepConfig) -> Iterator[Config]:
    """Serve the synthetic web on loopback for an http-transport config.

    Yields the config with ``fetch.proxy`` pointing at the server.  The
    in-process transport needs no server and is yielded unchanged.
    """
    if config.fetch.transport != "http" or not sweep.serve or config.synthetic is None:
        yield config
        return
    server = ServerThread(config.synthetic)
    server.start_and_wait()
    try:
        data = config.model_dump()
        data["fetch"]["proxy"] = server.proxy_url
        yield Config.model_validate(data)
    finally:
        server.stop()


def measure(
    config: Config,
    sweep: SweepConfig,
    seeds: list[str],
    trace: RequestTrace | None = None,
    sleep: Callable[[float], None] = time.sleep,
) -> dict[str, Any]:
    """Run one agent and return its steady-state figures."""
    agent = CrawlAgent(config, trace)
    agent.start()
    try:
        agent.add_seeds(seeds)
        sleep(sweep.warmup_s)
        start = time.monotonic()
        first = agent.stats()
        fronts: list[int] = []
        hosts: list[int] = []
        cpu: list[float] = []
        while time.monotonic() - start < sweep.duration_s - sweep.warmup_s:
            sleep(sweep.sample_interval_s)
            sample = agent.stats()
            fronts.append(sample["current_front_size"])
            hosts.append(sample["current_front_size"] + sample["workbench_hosts"])
            cpu.append(sample["cpu_percent"])
        last = agent.stats()
        window = max(time.monotonic() - start, 1e-9)
    finally:
        agent.stop()
    return {
        "pages_per_s": (last["pages"] - first["pages"]) / window,
        "bytes_per_s": (last["bytes"] - first["bytes"]) / window,
        "avg_front_size": float(np.mean(fronts)) if fronts else 0.0,
        "avg_active_hosts": float(np.mean(hosts)) if hosts else 0.0,
        "required_front_size": last["required_front_size"],
        "cpu_percent": float(np.mean(cpu)) if cpu else 0.0,
        "pages": last["pages"],
        "errors": last["errors"],
        "window_s": window,
    }


def sweep_points(config: Config) -> list[tuple[dict[str, Any], dict[str, dict[str, Any]]]]:
    """``(label, config updates)`` for every point of the configured sweep."""
    sweep = config.sweep or SweepConfig()
    if sweep.kind == "threads":
        return [({"fetch_workers": n}, {"fetch": {"workers": n}}) for n in sweep.workers]
    return [
        (
            {"ip_delay_ms": d, "host_delay_ms": d * sweep.host_delay_factor},
            {"politeness": {"ip_delay_ms": d, "host_delay_ms": d * sweep.host_delay_factor}},
        )
        for d in sweep.ip_delays_ms
    ]


def run_sweep(config: Config, output: Path | None = None) -> list[dict[str, Any]]:
    """Run every point of ``config.sweep``; one JSON line per point, then the fit."""
    sweep = config.sweep or SweepConfig()
    output = output or sweep.output
    seeds = list(config.agent.seeds)
    if not seeds and config.synthetic is not None:
        seeds = synthetic_seeds(config.synthetic)
    results: list[dict[str, Any]] = []
    with synthetic_web(config, sweep) as served:
        for label, updates in sweep_points(served):
            with tempfile.TemporaryDirectory(prefix="hostwise-sweep-") as tmp:
                point_config = _point_config(served, Path(tmp), updates)
                logger.info("Sweep point %s", label)
                figures = measure(point_config, sweep, seeds)
            row = {"kind": sweep.kind, **label, **figures}
            results.append(row)
            logger.info(
                "Sweep point %s: %.1f pages/s, front %.1f",
                label,
                row["pages_per_s"],
                row["avg_front_size"],
            )
            if output is not None:
                append_jsonl(output, row)

    if len(results) >= 2:
        if sweep.kind == "threads":
            xs = [r["fetch_workers"] for r in results]
            fit = fit_line(xs, [r["pages_per_s"] for r in results])
        else:
            xs = [r["ip_delay_ms"] for r in results]
            fit = fit_line(xs, [r["avg_front_size"] for r in results])
        summary = {"kind": sweep.kind, "fit": fit}
        if output is not None:
            append_jsonl(output, summary)
        logger.info("Sweep fit: %s", fit)
    return results


__all__ = ["fit_line", "measure", "run_sweep", "sweep_points", "synthetic_seeds", "synthetic_web"]
