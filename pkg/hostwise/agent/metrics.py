"""Periodic metrics: one JSON object per line on ``hostwise.metrics``."""

from __future__ import annotations

import json
import logging
import threading
import time
from collections.abc import Callable
from pathlib import Path
from typing import Any

from hostwise.utils.persistence import METRICS_LOGGER, append_jsonl

logger = logging.getLogger(__name__)
metrics_logger = logging.getLogger(METRICS_LOGGER)

RATE_KEYS = ("pages", "bytes")


class MetricsReporter(threading.Thread):
    """Samples a stats callable every ``interval_s`` and reports it.

    Each sample adds ``pages_per_s`` and ``bytes_per_s`` measured over the
    last interval.  Samples are kept in :attr:`samples` for experiments.
    """

    def __init__(
        self,
        stats: Callable[[], dict[str, Any]],
        interval_s: float = 10.0,
        file: Path | None = None,
        keep: int = 10_000,
    ) -> None:
        super().__init__(name="metrics", daemon=True)
        self.stats = stats
        self.interval_s = interval_s
        self.file = Path(file) if file is not None else None
        self.keep = keep
        self.samples: list[dict[str, Any]] = []
        self._previous: tuple[float, dict[str, Any]] | None = None
        self._stop_event = threading.Event()

    def stop(self) -> None:
        self._stop_event.set()

    def sample(self) -> dict[str, Any]:
        now = time.monotonic()
        snapshot = dict(self.stats())
        snapshot["time"] = round(time.time(), 3)
        if self._previous is not None:
            then, before = self._previous
            elapsed = max(now - then, 1e-9)
            for key in RATE_KEYS:
                snapshot[f"{key}_per_s"] = (snapshot.get(key, 0) - before.get(key, 0)) / elapsed
        self._previous = (now, snapshot)
        self.samples.append(snapshot)
        if len(self.samples) > self.keep:
            del self.samples[: len(self.samples) - self.keep]
        return snapshot

    def report(self) -> dict[str, Any]:
        snapshot = self.sample()
        metrics_logger.info(json.dumps(snapshot, sort_keys=True, default=str))
        if self.file is not None:
            try:
                append_jsonl(self.file, snapshot)
            except OSError as e:
                logger.warning("Could not append metrics to %s: %s", self.file, e)
        return snapshot

    def run(self) -> None:
        self._previous = (time.monotonic(), dict(self.stats()))
        while not self._stop_event.wait(self.interval_s):
            try:
                self.report()
            except Exception:
                logger.exception("Metrics sample failed")


__all__ = ["MetricsReporter"]
