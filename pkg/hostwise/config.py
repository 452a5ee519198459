"""Configuration management for hostwise.

Configuration is loaded from, highest priority first:
1. Environment variables (``HOSTWISE_<SECTION>_<KEY>``)
2. A TOML file (explicit path, else ``hostwise.toml`` in the data directory)
3. Default values

Sizes accept integers or unit strings: ``"256MB"`` is 256 * 10**6 bytes,
``"64MiB"`` is 64 * 2**20 bytes.
"""

from __future__ import annotations

import os
from pathlib import Path
from typing import Any, Literal

import toml
from platformdirs import user_data_dir
from pydantic import BaseModel, ByteSize, Field, ValidationError, model_validator

from hostwise.harness.spec import SyntheticWebSpec

ENV_PREFIX = "HOSTWISE_"
CONFIG_FILE_NAME = "hostwise.toml"


class ConfigError(ValueError):
    """Invalid configuration; ``errors`` holds one message per key path."""

    def __init__(self, errors: list[str]) -> None:
        self.errors = errors
        super().__init__("invalid configuration:\n  " + "\n  ".join(errors))


def default_data_dir() -> Path:
    return Path(user_data_dir("hostwise", appauthor=False))


class Section(BaseModel):
    model_config = {"extra": "forbid", "validate_assignment": True}


class AgentConfig(Section):
    name: str = Field(default="agent-0", description="Agent identity within the cluster")
    seeds: list[str] = Field(default_factory=list, description="Seed URLs")
    seed_file: Path | None = Field(default=None, description="File with one seed URL per line")
    data_dir: Path | None = Field(default=None, description="Root of all on-disk state")
    max_urls: int = Field(
        default=0, ge=0, description="Stop after this many fetches (0 = no limit)"
    )
    max_urls_per_host: int = Field(
        default=0, ge=0, description="URLs scheduled per host (0 = no limit)"
    )
    idle_shutdown_s: float = Field(
        default=0.0, ge=0.0, description="Stop when idle this long (0 = never)"
    )


class PolitenessConfig(Section):
    host_delay_ms: int = Field(default=4000, ge=0)
    ip_delay_ms: int = Field(default=2000, ge=0)
    respect_crawl_delay: bool = True
    max_crawl_delay_ms: int = Field(default=60_000, ge=0)
    host_overrides: dict[str, int] = Field(
        default_factory=dict, description="Per-host delay in milliseconds"
    )


class WorkbenchConfig(Section):
    size: ByteSize = Field(default=ByteSize(512_000_000), description="In-memory URL budget")


class SieveConfig(Section):
    size: ByteSize = Field(default=ByteSize(256_000_000), description="Pending-hash array size")
    directory: Path | None = None


class VirtualizerConfig(Section):
    directory: Path | None = None
    log_file_size: ByteSize = Field(default=ByteSize(64 * 2**20))
    gc_threshold: float = Field(default=0.5, gt=0.0, lt=1.0)


class DistributorConfig(Section):
    initial_front_factor: int = Field(default=2, ge=1)
    front_growth_factor: float = Field(default=1.1, ge=1.0)
    front_growth_floor: int = Field(default=1, ge=0)
    front_growth_interval_ms: int = Field(default=100, ge=0)
    idle_sleep_ms: int = Field(default=5, ge=1)


class FetchConfig(Section):
    workers: int = Field(default=64, ge=1)
    user_agent: str = "hostwise/0.1 (+https://example.invalid/hostwise)"
    timeout_s: float = Field(default=30.0, gt=0)
    keepalive_ms: int = Field(default=3000, ge=0)
    keepalive_max_urls: int = Field(default=4, ge=1)
    max_body_bytes: ByteSize = Field(default=ByteSize(8 * 2**20))
    memory_window_bytes: ByteSize = Field(default=ByteSize(64 * 2**10))
    robots_fallback: Literal["allow", "disallow"] = "allow"
    proxy: str | None = None
    transport: Literal["http", "synthetic"] = "http"
    max_retries: int = Field(default=2, ge=0)
    max_host_errors: int = Field(default=10, ge=1)
    backoff_initial_ms: int = Field(default=1, ge=1)
    backoff_max_ms: int = Field(default=256, ge=1)


class ParseConfig(Section):
    workers: int = Field(default_factory=lambda: os.cpu_count() or 1, ge=1)
    url_cache_size: int = Field(default=1 << 20, ge=2)
    store_unparsed: bool = True


class DnsConfig(Section):
    workers: int = Field(default=4, ge=1)
    resolver: Literal["system", "synthetic"] = "system"
    max_attempts: int = Field(default=3, ge=1)
    retry_delay_ms: int = Field(default=1000, ge=0)


class DedupConfig(Section):
    expected_archetypes: int = Field(default=1_000_000, ge=1)
    false_positive_rate: float = Field(default=1e-6, gt=0.0, lt=1.0)


class FiltersConfig(Section):
    schedule: str = "true"
    fetch: str = "true"
    parse: str = "true"
    follow: str = "true"
    store: str = "true"


class StoreConfig(Section):
    enabled: bool = True
    directory: Path | None = None
    max_file_size: ByteSize = Field(default=ByteSize(2**30))
    duplicate_policy: Literal["mark", "drop"] = "mark"


class ClusterConfig(Section):
    agents: dict[str, str] = Field(
        default_factory=dict, description="Agent id -> host:port of its datagram socket"
    )
    virtual_nodes: int = Field(default=128, ge=1)
    datagram_size: int = Field(default=1400, ge=64, le=65_000)
    flush_interval_ms: int = Field(default=50, ge=1)


class ControlConfig(Section):
    enabled: bool = False
    host: str = "127.0.0.1"
    port: int = Field(default=9311, ge=0, le=65535)


class MetricsConfig(Section):
    interval_s: float = Field(default=10.0, gt=0)
    file: Path | None = None


class LoggingConfig(Section):
    level: str = "INFO"
    file: Path | None = None
    max_log_lines: int = Field(default=100_000, ge=1)


class SweepConfig(Section):
    kind: Literal["threads", "politeness"] = "threads"
    workers: list[int] = Field(default_factory=lambda: [32, 64, 128, 256, 512, 1024])
    ip_delays_ms: list[int] = Field(default_factory=lambda: [250, 500, 1000, 2000])
    host_delay_factor: int = Field(default=8, ge=1, description="host delay = factor x IP delay")
    duration_s: float = Field(default=60.0, gt=0)
    warmup_s: float = Field(default=10.0, ge=0)
    sample_interval_s: float = Field(default=0.5, gt=0)
    output: Path | None = Field(default=None, description="JSONL file with one line per point")
    serve: bool = Field(
        default=True, description="Start the synthetic web in-process for the http transport"
    )

    @model_validator(mode="after")
    def _check_window(self) -> "SweepConfig":
        if self.warmup_s >= self.duration_s:
            raise ValueError("warmup_s must be shorter than duration_s")
        return self


class Config(BaseModel):
    """Main configuration container."""

    model_config = {"extra": "forbid"}

    agent: AgentConfig = Field(default_factory=AgentConfig)
    politeness: PolitenessConfig = Field(default_factory=PolitenessConfig)
    workbench: WorkbenchConfig = Field(default_factory=WorkbenchConfig)
    sieve: SieveConfig = Field(default_factory=SieveConfig)
    virtualizer: VirtualizerConfig = Field(default_factory=VirtualizerConfig)
    distributor: DistributorConfig = Field(default_factory=DistributorConfig)
    fetch: FetchConfig = Field(default_factory=FetchConfig)
    parse: ParseConfig = Field(default_factory=ParseConfig)
    dns: DnsConfig = Field(default_factory=DnsConfig)
    dedup: DedupConfig = Field(default_factory=DedupConfig)
    filters: FiltersConfig = Field(default_factory=FiltersConfig)
    store: StoreConfig = Field(default_factory=StoreConfig)
    cluster: ClusterConfig = Field(default_factory=ClusterConfig)
    control: ControlConfig = Field(default_factory=ControlConfig)
    metrics: MetricsConfig = Field(default_factory=MetricsConfig)
    logging: LoggingConfig = Field(default_factory=LoggingConfig)
    synthetic: SyntheticWebSpec | None = None
    sweep: SweepConfig | None = None

    @model_validator(mode="after")
    def _check_synthetic(self) -> "Config":
        uses_synthetic = self.fetch.transport == "synthetic" or self.dns.resolver == "synthetic"
        if uses_synthetic and self.synthetic is None:
            raise ValueError("the synthetic transport or resolver needs a [synthetic] section")
        if self.cluster.agents and self.agent.name not in self.cluster.agents:
            raise ValueError(f"agent.name {self.agent.name!r} is not listed in cluster.agents")
        return self

    @property
    def data_dir(self) -> Path:
        return self.agent.data_dir or default_data_dir()

    @property
    def sieve_dir(self) -> Path:
        return self.sieve.directory or self.data_dir / self.agent.name / "sieve"

    @property
    def virtualizer_dir(self) -> Path:
        return self.virtualizer.directory or self.data_dir / self.agent.name / "virtualizer"

    @property
    def store_dir(self) -> Path:
        return self.store.directory or self.data_dir / self.agent.name / "store"


def _load_config_file(path: Path | None) -> dict[str, Any]:
    """Load a TOML file; a missing default file means no file config.

    Raises:
        ConfigError: If an explicitly named file is missing or unreadable.
    """
    if path is None:
        default = default_data_dir() / CONFIG_FILE_NAME
        if not default.exists():
            return {}
        path = default
    try:
        with open(path, "r", encoding="utf-8") as f:
            return toml.load(f)
    except (OSError, toml.TomlDecodeError) as e:
        raise ConfigError([f"{path}: {e}"]) from e


def _coerce_env(field_annotation: Any, value: str) -> Any:
    text = str(field_annotation)
    if text.startswith("list"):
        return [item.strip() for item in value.split(",") if item.strip()]
    if text.startswith("dict"):
        pairs = (item.split("=", 1) for item in value.split(",") if "=" in item)
        return {k.strip(): v.strip() for k, v in pairs}
    return value


def _apply_env_overrides(data: dict[str, Any], environ: dict[str, str]) -> dict[str, Any]:
    """Merge ``HOSTWISE_<SECTION>_<KEY>`` variables into raw config data."""
    for name, field in Config.model_fields.items():
        section_model = field.annotation
        if name == "synthetic" or not isinstance(section_model, type):
            continue
        for key, key_field in section_model.model_fields.items():
            env_key = f"{ENV_PREFIX}{name.upper()}_{key.upper()}"
            if env_key in environ:
                section = data.setdefault(name, {})
                section[key] = _coerce_env(key_field.annotation, environ[env_key])
    return data


def _format_errors(error: ValidationError) -> list[str]:
    return [
        f"{'.'.join(str(part) for part in item['loc']) or '<root>'}: {item['msg']}"
        for item in error.errors()
    ]


def load_config(
    path: Path | None = None,
    overrides: dict[str, Any] | None = None,
    environ: dict[str, str] | None = None,
) -> Config:
    """Load configuration from defaults, file, and environment.

    Args:
        path: TOML file; defaults to ``hostwise.toml`` in the data directory.
        overrides: Raw section data applied over the file (used by sweeps).
        environ: Environment mapping; defaults to ``os.environ``.

    Raises:
        ConfigError: With one message per offending key path.
    """
    data = _load_config_file(path)
    for section, values in (overrides or {}).items():
        if isinstance(values, dict):
            data.setdefault(section, {}).update(values)
        else:
            data[section] = values
    synthetic = data.get("synthetic")
    if isinstance(synthetic, dict) and "spec_file" in synthetic:
        spec_path = Path(synthetic.pop("spec_file"))
        if path is not None and not spec_path.is_absolute():
            spec_path = path.parent / spec_path
        try:
            loaded = toml.load(spec_path)
        except (OSError, toml.TomlDecodeError) as e:
            raise ConfigError([f"synthetic.spec_file: cannot read {spec_path}: {e}"]) from e
        data["synthetic"] = {**loaded.get("synthetic", loaded), **synthetic}
    data = _apply_env_overrides(data, dict(os.environ if environ is None else environ))
    try:
        return Config.model_validate(data)
    except ValidationError as e:
        raise ConfigError(_format_errors(e)) from e


# Global config instance
_config: Config | None = None


def get_config() -> Config:
    """Get the global configuration instance."""
    global _config
    if _config is None:
        _config = load_config()
    return _config


def reload_config(path: Path | None = None) -> Config:
    """Reload configuration from file and environment."""
    global _config
    _config = load_config(path)
    return _config


def set_config(config: Config) -> Config:
    """Install an already loaded configuration as the global one."""
    global _config
    _config = config
    return _config


__all__ = [
    "AgentConfig",
    "ClusterConfig",
    "Config",
    "ConfigError",
    "ControlConfig",
    "DedupConfig",
    "DistributorConfig",
    "DnsConfig",
    "FetchConfig",
    "FiltersConfig",
    "LoggingConfig",
    "MetricsConfig",
    "ParseConfig",
    "PolitenessConfig",
    "SieveConfig",
    "StoreConfig",
    "SweepConfig",
    "VirtualizerConfig",
    "WorkbenchConfig",
    "default_data_dir",
    "get_config",
    "load_config",
    "reload_config",
    "set_config",
]
