"""Configuration model of the synthetic web."""

from __future__ import annotations

from pathlib import Path

import toml
from pydantic import BaseModel, Field, model_validator


class SyntheticWebSpec(BaseModel):
    """Shape of a deterministic synthetic web.

    Every page is a pure function of ``(seed, host, path)``.
    """

    seed: int = Field(default=0, ge=0, lt=2**64, description="Generator seed")
    domain: str = Field(default="synthweb.test", description="Suffix of every host name")
    host_count: int = Field(default=100, ge=1, le=100_000, description="Number of hosts")
    ip_count: int = Field(default=20, ge=1, description="Distinct fake IP addresses")
    pages_min: int = Field(default=50, ge=1, description="Minimum pages per host")
    pages_max: int = Field(default=200, ge=1, description="Maximum pages per host")
    branching: int = Field(
        default=10, ge=1, description="Children of each page in the per-host link tree"
    )
    outdegree_min: int = Field(default=0, ge=0, description="Minimum extra links per page")
    outdegree_max: int = Field(default=5, ge=0, description="Maximum extra links per page")
    external_fraction: float = Field(
        default=0.1, ge=0.0, le=1.0, description="Share of extra links pointing to other hosts"
    )
    nav_links: int = Field(
        default=3, ge=0, description="Sitewide navigation links repeated on every page"
    )
    page_size_min: int = Field(default=2048, ge=256, description="Minimum page size in bytes")
    page_size_max: int = Field(default=8192, ge=256, description="Maximum page size in bytes")
    delay_ms_min: int = Field(default=0, ge=0, description="Minimum per-request delay")
    delay_ms_max: int = Field(default=0, ge=0, description="Maximum per-request delay")
    reset_rate: float = Field(default=0.0, ge=0.0, le=1.0, description="Connection resets")
    server_error_rate: float = Field(default=0.0, ge=0.0, le=1.0, description="5xx responses")
    malformed_rate: float = Field(default=0.0, ge=0.0, le=1.0, description="Broken HTML")
    near_duplicate_fraction: float = Field(
        default=0.0,
        ge=0.0,
        le=1.0,
        description="Share of pages copying their host's root page with new counters and dates",
    )
    robots_disallow: list[str] = Field(
        default_factory=list, description="Path prefixes disallowed on every host"
    )
    host: str = Field(default="127.0.0.1", description="Address the server binds")
    port: int = Field(default=8399, ge=0, le=65535, description="Port the server binds")
    concurrency: int = Field(default=300, ge=1, description="Requests served at once")
    trace_file: Path | None = Field(default=None, description="JSONL request trace")

    @model_validator(mode="after")
    def _check_ranges(self) -> "SyntheticWebSpec":
        for low, high in (
            ("pages_min", "pages_max"),
            ("outdegree_min", "outdegree_max"),
            ("page_size_min", "page_size_max"),
            ("delay_ms_min", "delay_ms_max"),
        ):
            if getattr(self, low) > getattr(self, high):
                raise ValueError(f"{low} must not exceed {high}")
        if self.reset_rate + self.server_error_rate + self.malformed_rate > 1:
            raise ValueError("error rates must sum to at most 1")
        return self

    @classmethod
    def load(cls, path: Path) -> "SyntheticWebSpec":
        """Load a spec from a TOML file (a ``[synthetic]`` table or top level)."""
        data = toml.load(path)
        return cls.model_validate(data.get("synthetic", data))


__all__ = ["SyntheticWebSpec"]
