"""Request traces and the politeness audit run over them."""

from __future__ import annotations

import json
import threading
from collections import defaultdict
from collections.abc import Iterable, Iterator
from dataclasses import dataclass, field
from pathlib import Path


@dataclass(frozen=True)
class TraceEvent:
    t_ms: int
    host: str
    ip: str
    path: str

    def to_json(self) -> str:
        return json.dumps({"t": self.t_ms, "host": self.host, "ip": self.ip, "path": self.path})

    @classmethod
    def from_json(cls, line: str) -> "TraceEvent":
        data = json.loads(line)
        return cls(int(data["t"]), data["host"], data["ip"], data["path"])


class RequestTrace:
    """Thread-safe in-memory request trace."""

    def __init__(self) -> None:
        self._events: list[TraceEvent] = []
        self._lock = threading.Lock()

    def record(self, t_ms: int, host: str, ip: str, path: str) -> None:
        with self._lock:
            self._events.append(TraceEvent(t_ms, host, ip, path))

    @property
    def events(self) -> list[TraceEvent]:
        with self._lock:
            return list(self._events)

    def __len__(self) -> int:
        return len(self._events)

    def write(self, path: Path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            for event in self.events:
                f.write(event.to_json() + "\n")


def load_trace(path: Path) -> Iterator[TraceEvent]:
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            if line.strip():
                yield TraceEvent.from_json(line)


@dataclass
class GapReport:
    """Minimum gap and violations for one kind of key (hosts or IPs)."""

    delay_ms: int
    min_gap: dict[str, int] = field(default_factory=dict)
    violations: list[tuple[str, int, int]] = field(default_factory=list)

    @property
    def overall_min_gap(self) -> int | None:
        return min(self.min_gap.values(), default=None)


@dataclass
class AuditReport:
    requests: int
    hosts: GapReport
    ips: GapReport

    @property
    def ok(self) -> bool:
        return not self.hosts.violations and not self.ips.violations

    def summary(self) -> dict[str, object]:
        return {
            "requests": self.requests,
            "hosts": len(self.hosts.min_gap),
            "ips": len(self.ips.min_gap),
            "host_min_gap_ms": self.hosts.overall_min_gap,
            "ip_min_gap_ms": self.ips.overall_min_gap,
            "host_violations": len(self.hosts.violations),
            "ip_violations": len(self.ips.violations),
        }


def _gaps(keyed: dict[str, list[int]], delay_ms: int, tolerance_ms: int) -> GapReport:
    report = GapReport(delay_ms)
    for key, times in keyed.items():
        times.sort()
        for previous, current in zip(times, times[1:]):
            gap = current - previous
            if key not in report.min_gap or gap < report.min_gap[key]:
                report.min_gap[key] = gap
            if gap + tolerance_ms < delay_ms:
                report.violations.append((key, previous, current))
    return report


def audit(
    events: Iterable[TraceEvent],
    host_delay_ms: int,
    ip_delay_ms: int,
    tolerance_ms: int = 0,
    include_robots: bool = True,
) -> AuditReport:
    """Check that requests to one host (or IP) are at least the delay apart."""
    by_host: dict[str, list[int]] = defaultdict(list)
    by_ip: dict[str, list[int]] = defaultdict(list)
    count = 0
    for event in events:
        if not include_robots and event.path == "/robots.txt":
            continue
        count += 1
        by_host[event.host].append(event.t_ms)
        by_ip[event.ip].append(event.t_ms)
    return AuditReport(
        count,
        _gaps(by_host, host_delay_ms, tolerance_ms),
        _gaps(by_ip, ip_delay_ms, tolerance_ms),
    )


__all__ = ["AuditReport", "GapReport", "RequestTrace", "TraceEvent", "audit", "load_trace"]
