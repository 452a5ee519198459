"""One crawl agent: every frontier, pipeline and cluster thread wired together."""

from __future__ import annotations

import logging
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import psutil
import requests

from hostwise.agent.metrics import MetricsReporter
from hostwise.cluster.control import ControlPlane, ControlServer
from hostwise.cluster.exchange import DatagramReceiver, DatagramSender, parse_address
from hostwise.cluster.ring import AgentRing
from hostwise.config import Config
from hostwise.core import burl
from hostwise.core.burl import CrawlUrl, UrlError
from hostwise.core.filters import HOOKS, FilterSet
from hostwise.frontier.distributor import Distributor, FrontController
from hostwise.frontier.queues import LockFreeQueue
from hostwise.frontier.sieve import MercatorSieve
from hostwise.frontier.virtualizer import VirtualQueueStore
from hostwise.frontier.workbench import (
    ConstantDelays,
    DoneDrainer,
    TodoMover,
    VisitState,
    Workbench,
    front_size,
)
from hostwise.harness.audit import RequestTrace
from hostwise.harness.transport import SyntheticAdapter, synthetic_session
from hostwise.pipeline.dedup import DuplicateFilter, UrlSeenCache
from hostwise.pipeline.dns import DnsWorker, synthetic_resolver, system_resolver
from hostwise.pipeline.fetch_data import FetchData
from hostwise.pipeline.fetcher import FetchOptions, FetchWorker, build_session
from hostwise.pipeline.parser import LinkRouter, ParseWorker
from hostwise.store.warc import StoreFailed, WarcStore

logger = logging.getLogger(__name__)

POLL_INTERVAL = 0.1
FETCH_COUNTERS = (
    "pages",
    "bytes",
    "errors",
    "retries",
    "robots_fetches",
    "robots_blocked",
    "filtered",
    "truncated",
    "waits",
    "visits",
)
PARSE_COUNTERS = (
    "parsed",
    "links",
    "bad_links",
    "parse_failures",
    "stored",
    "archetypes",
    "duplicate_pages",
)


@dataclass
class CrawlSummary:
    reason: str
    elapsed_s: float
    pages: int
    bytes: int
    archetypes: int
    duplicates: int
    errors: int
    stats: dict[str, Any] = field(default_factory=dict)

    @property
    def pages_per_s(self) -> float:
        return self.pages / self.elapsed_s if self.elapsed_s else 0.0


def _flatten(prefix: str, data: dict[str, Any]) -> dict[str, Any]:
    flat: dict[str, Any] = {}
    for key, value in data.items():
        name = f"{prefix}.{key}" if prefix else key
        if isinstance(value, dict) and key != "agents" and key != "host_overrides":
            flat.update(_flatten(name, value))
        else:
            flat[name] = value
    return flat


class CrawlAgent:
    """Builds one agent from a :class:`Config`; nothing runs until :meth:`start`.

    ``trace`` collects every request when the in-process synthetic transport
    is used.
    """

    def __init__(self, config: Config, trace: RequestTrace | None = None) -> None:
        self.config = config
        self.name = config.agent.name
        self.trace = trace
        self._started_at: float | None = None
        self._stopped = False
        self._workers_lock = threading.Lock()
        self._process = psutil.Process()

        self.filters = FilterSet(**config.filters.model_dump())
        self.sieve = MercatorSieve(config.sieve_dir, int(config.sieve.size))
        self.virtualizer = VirtualQueueStore(
            config.virtualizer_dir,
            int(config.virtualizer.log_file_size),
            config.virtualizer.gc_threshold,
        )
        self.workbench = Workbench(int(config.workbench.size))
        self.delays = ConstantDelays(
            config.politeness.host_delay_ms,
            config.politeness.ip_delay_ms,
            config.politeness.host_overrides,
            config.politeness.respect_crawl_delay,
            config.politeness.max_crawl_delay_ms,
        )

        self.todo: LockFreeQueue[VisitState] = LockFreeQueue()
        self.done: LockFreeQueue[VisitState] = LockFreeQueue()
        self.results: LockFreeQueue[FetchData] = LockFreeQueue()
        self.dns_queue: LockFreeQueue[VisitState] = LockFreeQueue()
        self.requests: LockFreeQueue[tuple[str, VisitState]] = LockFreeQueue()

        self.mover = TodoMover(self.workbench, self.todo)
        self.drainer = DoneDrainer(self.workbench, self.done, self.requests, self.delays)
        dist = config.distributor
        self.controller = FrontController(
            int(config.workbench.size),
            config.fetch.workers,
            initial_factor=dist.initial_front_factor,
            growth_factor=dist.front_growth_factor,
            growth_floor=dist.front_growth_floor,
            growth_interval_ms=dist.front_growth_interval_ms,
        )
        self.distributor = Distributor(
            self.sieve,
            self.virtualizer,
            self.workbench,
            self.controller,
            self.front_size,
            self.dns_queue,
            self.requests,
            max_urls_per_host=config.agent.max_urls_per_host,
            idle_sleep=dist.idle_sleep_ms / 1000,
        )

        resolver = (
            synthetic_resolver(config.synthetic)
            if config.dns.resolver == "synthetic"
            else system_resolver
        )
        self.dns_workers = [
            DnsWorker(
                self.workbench,
                self.dns_queue,
                self.requests,
                resolver,
                max_attempts=config.dns.max_attempts,
                retry_delay_ms=config.dns.retry_delay_ms,
                name=f"dns-{i}",
            )
            for i in range(config.dns.workers)
        ]

        self.url_cache = UrlSeenCache(config.parse.url_cache_size)
        self.duplicates = DuplicateFilter(
            config.dedup.expected_archetypes, config.dedup.false_positive_rate
        )
        self.store: WarcStore | None = None
        if config.store.enabled:
            self.store = WarcStore(
                config.store_dir,
                int(config.store.max_file_size),
                config.store.duplicate_policy,
                agent=self.name,
            )

        self.ring: AgentRing | None = None
        self.sender: DatagramSender | None = None
        self.receiver: DatagramReceiver | None = None
        if config.cluster.agents:
            addresses = {a: parse_address(addr) for a, addr in config.cluster.agents.items()}
            self.ring = AgentRing(addresses, config.cluster.virtual_nodes)
            self.sender = DatagramSender(
                {a: addr for a, addr in addresses.items() if a != self.name},
                config.cluster.datagram_size,
                config.cluster.flush_interval_ms,
            )
        self.router = LinkRouter(
            self.sieve, self.url_cache, self.filters, self.ring, self.name, self.sender
        )
        if config.cluster.agents:
            own = parse_address(config.cluster.agents[self.name])
            self.receiver = DatagramReceiver(own, self.router.receive)

        self.parse_workers = [
            ParseWorker(
                self.results,
                self.router,
                self.filters,
                self.duplicates,
                self.store,
                config.parse.store_unparsed,
                name=f"parse-{i}",
            )
            for i in range(config.parse.workers)
        ]

        self.fetch_options = FetchOptions.from_config(config.fetch)
        self._adapter: SyntheticAdapter | None = None
        if config.fetch.transport == "synthetic":
            self._adapter = SyntheticAdapter(config.synthetic, trace)
        self.fetch_workers: list[FetchWorker] = []
        self.retired_fetch_workers: list[FetchWorker] = []
        for _ in range(config.fetch.workers):
            self.fetch_workers.append(self._new_fetch_worker())

        self.control = ControlPlane()
        self._register_control()
        self.control_server: ControlServer | None = None
        if config.control.enabled:
            self.control_server = ControlServer(
                self.control, config.control.host, config.control.port
            )
        self.metrics = MetricsReporter(self.stats, config.metrics.interval_s, config.metrics.file)

    # -- construction helpers ---------------------------------------------

    def front_size(self) -> int:
        return front_size(self.mover, self.drainer)

    def _note_wait(self) -> None:
        self.controller.note_worker_wait(self.front_size())

    def _session(self) -> requests.Session:
        if self._adapter is not None:
            session = synthetic_session(self._adapter)
            session.headers.update(
                {"User-Agent": self.fetch_options.user_agent, "Accept-Encoding": "identity"}
            )
            return session
        return build_session(self.fetch_options.user_agent, self.config.fetch.proxy)

    def _new_fetch_worker(self) -> FetchWorker:
        index = len(self.fetch_workers) + len(self.retired_fetch_workers)
        return FetchWorker(
            self.todo,
            self.done,
            self.results,
            self.filters,
            self._note_wait,
            self._session(),
            self.fetch_options,
            name=f"fetch-{index}",
        )

    def _register_control(self) -> None:
        plane = self.control
        plane.register_values(_flatten("", self.config.model_dump(mode="json")))
        plane.register(
            "politeness.host_delay_ms",
            lambda: self.delays.host_delay_ms,
            lambda v: setattr(self.delays, "host_delay_ms", _non_negative(v)),
            int,
        )
        plane.register(
            "politeness.ip_delay_ms",
            lambda: self.delays.ip_delay_ms,
            lambda v: setattr(self.delays, "ip_delay_ms", _non_negative(v)),
            int,
        )
        plane.register(
            "distributor.required_front_size",
            lambda: self.controller.required,
            lambda v: self.controller.reset(_positive(v)),
            int,
        )
        plane.register(
            "fetch.workers", lambda: len(self.fetch_workers), self.set_fetch_workers, int
        )
        plane.register(
            "fetch.keepalive_max_urls",
            lambda: self.fetch_options.keepalive_max_urls,
            lambda v: setattr(self.fetch_options, "keepalive_max_urls", _positive(v)),
            int,
        )
        for hook in HOOKS:
            plane.register(
                f"filters.{hook}",
                lambda hook=hook: self.filters.get(hook).to_text(),
                lambda v, hook=hook: self.filters.set(hook, v),
            )
        plane.add_stats_provider(self.stats)

    # -- runtime tuning ---------------------------------------------------

    def set_fetch_workers(self, count: int) -> None:
        """Grow or shrink the fetch worker pool while running."""
        count = _positive(count)
        with self._workers_lock:
            while len(self.fetch_workers) < count:
                worker = self._new_fetch_worker()
                self.fetch_workers.append(worker)
                if self._started_at is not None and not self._stopped:
                    worker.start()
            while len(self.fetch_workers) > count:
                worker = self.fetch_workers.pop()
                worker.stop()
                self.retired_fetch_workers.append(worker)
        logger.info("Fetch workers set to %d", count)

    # -- seeds ------------------------------------------------------------

    def add_seeds(self, urls: list[str]) -> int:
        """Route seed URLs like discovered links; return how many parsed."""
        added = 0
        for text in urls:
            text = text.strip()
            if not text or text.startswith("#"):
                continue
            try:
                url = burl.parse(text)
            except UrlError as e:
                logger.warning("Ignoring seed %r: %s", text, e)
                continue
            self.route_seed(url)
            added += 1
        return added

    def route_seed(self, url: CrawlUrl) -> None:
        self.router.route(url)

    def configured_seeds(self) -> list[str]:
        seeds = list(self.config.agent.seeds)
        seed_file = self.config.agent.seed_file
        if seed_file is not None:
            seeds.extend(Path(seed_file).read_text(encoding="utf-8").splitlines())
        return seeds

    # -- lifecycle --------------------------------------------------------

    def _threads(self) -> list[threading.Thread]:
        threads: list[threading.Thread] = [
            self.mover,
            self.drainer,
            self.distributor,
            *self.dns_workers,
            *self.parse_workers,
            *self.fetch_workers,
        ]
        if self.receiver is not None:
            threads.append(self.receiver)
        if self.sender is not None:
            threads.append(self.sender)
        return threads

    def start(self) -> None:
        if self._started_at is not None:
            raise RuntimeError("agent already started")
        self._started_at = time.monotonic()
        self._process.cpu_percent(None)
        if self.control_server is not None:
            self.control_server.start_and_wait()
        for thread in self._threads():
            thread.start()
        self.metrics.start()
        logger.info(
            "Agent %s started: %d fetch, %d parse, %d DNS workers",
            self.name,
            len(self.fetch_workers),
            len(self.parse_workers),
            len(self.dns_workers),
        )

    def stop(self, timeout: float = 10.0) -> None:
        """Stop every thread (each joined with ``timeout``) and close all stores."""
        if self._stopped:
            return
        self._stopped = True
        with self._workers_lock:
            fetchers = self.fetch_workers + self.retired_fetch_workers
        stages: list[list[Any]] = [
            fetchers,
            self.parse_workers,
            [self.mover, self.drainer, self.distributor, *self.dns_workers],
            [t for t in (self.receiver, self.sender) if t is not None],
            [self.metrics],
        ]
        for stage in stages:
            for thread in stage:
                thread.stop()
            for thread in stage:
                if thread.is_alive():
                    thread.join(timeout)
                    if thread.is_alive():
                        logger.warning("Thread %s did not stop within %.1fs", thread.name, timeout)
        if self.control_server is not None and self.control_server.is_alive():
            self.control_server.stop()
            self.control_server.join(timeout)
        with self.distributor.lock:
            self.sieve.close()
            self.virtualizer.close()
        if self.store is not None:
            try:
                self.store.close()
            except StoreFailed as e:
                logger.error("%s", e)
        logger.info("Agent %s stopped", self.name)

    def is_idle(self) -> bool:
        """True when no URL is queued, scheduled, in flight or on disk."""
        return (
            self.front_size() == 0
            and self.todo.size() == 0
            and self.done.size() == 0
            and self.results.size() == 0
            and self.requests.size() == 0
            and self.dns_queue.size() == 0
            and all(w.pending_retries == 0 for w in self.dns_workers)
            and self.sieve.is_empty()
            and self.workbench.scheduled_count() == 0
            and self.virtualizer.total_count() == 0
        )

    def run(self, duration: float | None = None, seeds: list[str] | None = None) -> CrawlSummary:
        """Start, crawl until a stop condition holds, stop, and summarize.

        Stops when ``duration`` seconds elapsed, ``agent.max_urls`` pages were
        fetched, or the agent stayed idle for ``agent.idle_shutdown_s``.
        """
        self.start()
        self.add_seeds(self.configured_seeds() + list(seeds or []))
        max_urls = self.config.agent.max_urls
        idle_limit = self.config.agent.idle_shutdown_s
        idle_since: float | None = None
        reason = "interrupted"
        try:
            try:
                while True:
                    time.sleep(POLL_INTERVAL)
                    now = time.monotonic()
                    if duration is not None and now - self._started_at >= duration:
                        reason = "duration"
                        break
                    if max_urls and self.pages() >= max_urls:
                        reason = "max_urls"
                        break
                    if self.store is not None and self.store.error is not None:
                        reason = "store_failed"
                        break
                    if idle_limit > 0 and self.is_idle():
                        idle_since = idle_since or now
                        if now - idle_since >= idle_limit:
                            reason = "idle"
                            break
                    else:
                        idle_since = None
            except KeyboardInterrupt:
                logger.info("Interrupted")
            final = self.stats()
        finally:
            self.stop()
        summary = CrawlSummary(
            reason=reason,
            elapsed_s=final["elapsed_s"],
            pages=final["pages"],
            bytes=final["bytes"],
            archetypes=final["archetypes"],
            duplicates=final["duplicate_pages"],
            errors=final["errors"],
            stats=final,
        )
        logger.info(
            "Crawl finished (%s): %d pages in %.1fs, %d archetypes",
            reason,
            summary.pages,
            summary.elapsed_s,
            summary.archetypes,
        )
        return summary

    # -- metrics ----------------------------------------------------------

    def pages(self) -> int:
        with self._workers_lock:
            workers = self.fetch_workers + self.retired_fetch_workers
        return sum(w.pages for w in workers)

    def stats(self) -> dict[str, Any]:
        with self._workers_lock:
            fetchers = self.fetch_workers + self.retired_fetch_workers
            active_fetchers = len(self.fetch_workers)
        data: dict[str, Any] = {"agent": self.name}
        for key in FETCH_COUNTERS:
            data[key] = sum(getattr(w, key) for w in fetchers)
        for key in PARSE_COUNTERS:
            data[key] = sum(getattr(w, key) for w in self.parse_workers)
        data.update(self.distributor.stats())
        elapsed = time.monotonic() - self._started_at if self._started_at else 0.0
        data.update(
            {
                "elapsed_s": elapsed,
                "pages_per_s_avg": data["pages"] / elapsed if elapsed else 0.0,
                "bytes_per_s_avg": data["bytes"] / elapsed if elapsed else 0.0,
                "fetch_workers": active_fetchers,
                "parse_workers": len(self.parse_workers),
                "todo_size": self.todo.size(),
                "done_size": self.done.size(),
                "results_size": self.results.size(),
                "dns_queue_size": self.dns_queue.size(),
                "workbench_bytes": self.workbench.used_bytes,
                "workbench_entries": self.workbench.entry_count(),
                "workbench_hosts": self.workbench.scheduled_count(),
                "parked_hosts": self.workbench.parked_count(),
                "known_hosts": len(self.workbench.states),
                "sieve_size": self.sieve.size(),
                "sieve_flushes": self.sieve.flushes,
                "virtualized_urls": self.virtualizer.total_count(),
                "virtualizer_used_bytes": self.virtualizer.used_bytes,
                "virtualizer_allocated_bytes": self.virtualizer.allocated_bytes,
                "virtualizer_collections": self.virtualizer.collections,
                "dns_resolved": sum(w.resolved for w in self.dns_workers),
                "dns_failures": sum(w.failures for w in self.dns_workers),
                "urls_discovered": self.router.discovered,
                "urls_scheduled": self.router.scheduled,
                "urls_sent": self.router.sent,
                "cache_absorption": self.router.cache_absorption,
                "duplicate_rate": (
                    data["duplicate_pages"] / data["parsed"] if data["parsed"] else 0.0
                ),
                "cpu_percent": self._process.cpu_percent(None),
                "rss_bytes": self._process.memory_info().rss,
            }
        )
        if self.store is not None:
            data["store_records"] = self.store.records
            data["store_bytes"] = self.store.bytes_written
        if self.receiver is not None:
            data["urls_received"] = self.receiver.urls
        return data


def _positive(value: int) -> int:
    if value < 1:
        raise ValueError(f"expected a positive integer, got {value}")
    return value


def _non_negative(value: int) -> int:
    if value < 0:
        raise ValueError(f"expected a non-negative integer, got {value}")
    return value


__all__ = ["CrawlAgent", "CrawlSummary"]
