"""Command-line interface entrypoint for hostwise."""

from __future__ import annotations

import json
from pathlib import Path

import click

from hostwise import __version__
from hostwise.config import Config, ConfigError, load_config, set_config
from hostwise.utils.persistence import log_path, setup_logging


def _load(config_path: Path | None, overrides: dict | None = None) -> Config:
    try:
        return set_config(load_config(config_path, overrides))
    except ConfigError as e:
        raise click.ClickException("invalid configuration:\n  " + "\n  ".join(e.errors))


def _setup_logging(config: Config, level: str | None = None) -> None:
    file = config.logging.file or log_path(config.data_dir, config.agent.name)
    setup_logging(level or config.logging.level, file, config.logging.max_log_lines)


@click.group(invoke_without_command=True)
@click.version_option(__version__, prog_name="hostwise")
@click.pass_context
def cli(ctx: click.Context) -> None:
    """Polite, per-host breadth-first web crawler."""
    if ctx.invoked_subcommand is None:
        click.echo(ctx.get_help())


@cli.command()
@click.option(
    "--config", "config_path", type=click.Path(exists=True, dir_okay=False, path_type=Path)
)
@click.option(
    "--seed-urls",
    type=click.Path(exists=True, dir_okay=False, path_type=Path),
    help="File with one seed URL per line",
)
@click.option("--agent", "agent_name", default=None, help="Agent name (overrides agent.name)")
@click.option("--duration", type=float, default=None, help="Stop after this many seconds")
@click.option("--max-urls", type=int, default=None, help="Stop after this many fetches")
@click.option("--log-level", default=None, help="Override logging.level")
def crawl(
    config_path: Path | None,
    seed_urls: Path | None,
    agent_name: str | None,
    duration: float | None,
    max_urls: int | None,
    log_level: str | None,
) -> None:
    """Run one crawl agent until it is idle, done or interrupted."""
    from hostwise.agent import CrawlAgent

    agent_overrides = {}
    if agent_name:
        agent_overrides["name"] = agent_name
    if max_urls is not None:
        agent_overrides["max_urls"] = max_urls
    if seed_urls is not None:
        agent_overrides["seed_file"] = str(seed_urls)
    config = _load(config_path, {"agent": agent_overrides} if agent_overrides else None)
    _setup_logging(config, log_level)

    try:
        agent = CrawlAgent(config)
    except OSError as e:
        raise click.ClickException(f"cannot start agent: {e}")
    if config.control.enabled:
        click.echo(f"Control plane on {config.control.host}:{config.control.port}")
    summary = agent.run(duration)
    click.echo(
        f"{summary.reason}: {summary.pages} pages, {summary.bytes} bytes in "
        f"{summary.elapsed_s:.1f}s ({summary.pages_per_s:.1f} pages/s), "
        f"{summary.archetypes} archetypes, {summary.duplicates} duplicates, "
        f"{summary.errors} errors"
    )


@cli.command()
@click.option(
    "--spec",
    "spec_path",
    type=click.Path(exists=True, dir_okay=False, path_type=Path),
    help="Synthetic web TOML (a [synthetic] table or top-level keys)",
)
@click.option("--host", default=None, help="Bind address")
@click.option("--port", type=int, default=None, help="Bind port")
@click.option("--trace", type=click.Path(dir_okay=False, path_type=Path), default=None)
@click.option("--log-level", default="INFO")
def synthweb(
    spec_path: Path | None,
    host: str | None,
    port: int | None,
    trace: Path | None,
    log_level: str,
) -> None:
    """Serve the synthetic web (use it as the crawler's HTTP proxy)."""
    from pydantic import ValidationError

    from hostwise.harness.server import serve
    from hostwise.harness.spec import SyntheticWebSpec

    try:
        spec = SyntheticWebSpec.load(spec_path) if spec_path else SyntheticWebSpec()
        updates = {"host": host, "port": port, "trace_file": trace}
        spec = SyntheticWebSpec.model_validate(
            {**spec.model_dump(), **{k: v for k, v in updates.items() if v is not None}}
        )
    except (OSError, ValidationError) as e:
        raise click.ClickException(f"invalid synthetic web spec: {e}")
    setup_logging(log_level)
    click.echo(f"Synthetic web: {spec.host_count} hosts on http://{spec.host}:{spec.port}")
    serve(spec)


@cli.command()
@click.option(
    "--trace",
    "trace_path",
    required=True,
    type=click.Path(exists=True, dir_okay=False, path_type=Path),
)
@click.option("--host-delay", type=int, required=True, help="Minimum per-host gap (ms)")
@click.option("--ip-delay", type=int, required=True, help="Minimum per-IP gap (ms)")
@click.option("--tolerance", type=int, default=0, help="Allowed shortfall (ms)")
@click.option("--exclude-robots", is_flag=True, help="Ignore robots.txt requests")
@click.option("--show", type=int, default=10, help="Violations to print per kind")
def audit(
    trace_path: Path,
    host_delay: int,
    ip_delay: int,
    tolerance: int,
    exclude_robots: bool,
    show: int,
) -> None:
    """Check a request trace for politeness violations."""
    from hostwise.harness.audit import audit as run_audit
    from hostwise.harness.audit import load_trace

    try:
        report = run_audit(
            load_trace(trace_path),
            host_delay,
            ip_delay,
            tolerance_ms=tolerance,
            include_robots=not exclude_robots,
        )
    except (OSError, ValueError, KeyError) as e:
        raise click.ClickException(f"cannot read trace {trace_path}: {e}")
    click.echo(json.dumps(report.summary(), indent=2))
    for kind, gaps in (("host", report.hosts), ("ip", report.ips)):
        for key, previous, current in gaps.violations[:show]:
            click.echo(
                f"violation {kind} {key}: {current - previous} ms < {gaps.delay_ms} ms at {current}"
            )
    if not report.ok:
        raise SystemExit(1)


@cli.command(name="warc-cat")
@click.argument("path", type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--skip-corrupt", is_flag=True, help="Skip damaged records instead of failing")
def warc_cat(path: Path, skip_corrupt: bool) -> None:
    """Print one line per record of a store file."""
    from hostwise.store.warc import CorruptRecord, iterate

    try:
        for record in iterate(path, skip_corrupt=skip_corrupt):
            digest = f"{record.content_digest:032x}" if record.content_digest is not None else "-"
            click.echo(
                f"{record.offset}\t{record.record_type}\t{record.status or '-'}\t"
                f"{record.uri or '-'}\t{digest}\t{'dup' if record.is_duplicate else 'new'}"
            )
    except CorruptRecord as e:
        raise click.ClickException(str(e))


@cli.command()
@click.argument("command", nargs=-1, required=True)
@click.option(
    "--config", "config_path", type=click.Path(exists=True, dir_okay=False, path_type=Path)
)
@click.option("--host", default=None, help="Control host (default: control.host)")
@click.option("--port", type=int, default=None, help="Control port (default: control.port)")
def control(
    command: tuple[str, ...], config_path: Path | None, host: str | None, port: int | None
) -> None:
    """Send GET <key>, SET <key> <value>, STATS or KEYS to a running agent."""
    from hostwise.cluster.control import send_command

    config = _load(config_path)
    host = host or config.control.host
    port = port or config.control.port
    try:
        response = send_command(host, port, " ".join(command))
    except OSError as e:
        raise click.ClickException(f"cannot reach control plane at {host}:{port}: {e}")
    status, _, payload = response.partition(" ")
    if status != "OK":
        raise click.ClickException(payload or response)
    try:
        click.echo(json.dumps(json.loads(payload), indent=2, sort_keys=True))
    except json.JSONDecodeError:
        click.echo(payload)


@cli.command()
@click.option(
    "--config",
    "config_path",
    required=True,
    type=click.Path(exists=True, dir_okay=False, path_type=Path),
)
@click.option("--output", type=click.Path(dir_okay=False, path_type=Path), default=None)
def sweep(config_path: Path, output: Path | None) -> None:
    """Run the thread-scaling or politeness sweep described in a config file."""
    from hostwise.harness.experiments import run_sweep

    config = _load(config_path)
    if config.sweep is None:
        raise click.ClickException(f"{config_path} has no [sweep] section")
    _setup_logging(config)
    rows = run_sweep(config, output)
    for row in rows:
        click.echo(json.dumps(row, sort_keys=True))


def main() -> None:
    cli()


if __name__ == "__main__":
    main()
