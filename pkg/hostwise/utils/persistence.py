"""Log files and small on-disk state helpers."""

from __future__ import annotations

import json
import logging
import os
from pathlib import Path
from typing import Any

LOG_FORMAT = "[%(asctime)s] %(name)s - %(levelname)s - %(message)s"
LOG_DATEFMT = "%Y-%m-%d %H:%M:%S"
METRICS_LOGGER = "hostwise.metrics"

_installed: list[logging.Handler] = []


def _create_dir(path: Path) -> bool:
    try:
        path.mkdir(parents=True, exist_ok=True)
        return True
    except OSError:
        return False


def log_path(data_dir: Path, agent: str) -> Path:
    return Path(data_dir) / "logs" / f"{agent}.log"


def rotate_log(path: Path, max_lines: int) -> None:
    """Keep only the last ``max_lines`` lines of a log file."""
    path = Path(path)
    if not path.exists():
        return
    lines = path.read_text(encoding="utf-8", errors="replace").splitlines()
    if len(lines) > max_lines:
        path.write_text("\n".join(lines[-max_lines:]) + "\n", encoding="utf-8")


def setup_logging(level: str = "INFO", file: Path | None = None, max_lines: int = 100_000) -> None:
    """Configure the ``hostwise`` logger tree.

    Records go to stderr and, when ``file`` is given, to that file after it
    has been trimmed to ``max_lines``.
    """
    formatter = logging.Formatter(LOG_FORMAT, datefmt=LOG_DATEFMT)
    package = logging.getLogger("hostwise")
    package.setLevel(level.upper())
    while _installed:
        old = _installed.pop()
        for name in ("hostwise", "uvicorn", "uvicorn.error"):
            logging.getLogger(name).removeHandler(old)
        old.close()

    console = logging.StreamHandler()
    console.setFormatter(formatter)
    package.addHandler(console)
    _installed.append(console)

    if file is not None:
        file = Path(file)
        if _create_dir(file.parent):
            rotate_log(file, max_lines)
            handler = logging.FileHandler(file, mode="a", encoding="utf-8")
            handler.setFormatter(formatter)
            package.addHandler(handler)
            _installed.append(handler)
            for name in ("uvicorn", "uvicorn.error"):
                logging.getLogger(name).addHandler(handler)


def write_json_atomic(path: Path, data: Any, indent: int | None = 2) -> None:
    """Write JSON to a temp file, fsync it, then rename it over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    temp_file = path.with_suffix(path.suffix + ".tmp")
    with open(temp_file, "w", encoding="utf-8") as f:
        json.dump(data, f, indent=indent, sort_keys=True)
        f.flush()
        os.fsync(f.fileno())
    os.replace(temp_file, path)


def append_jsonl(path: Path, record: dict[str, Any]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "a", encoding="utf-8") as f:
        f.write(json.dumps(record, sort_keys=True) + "\n")


__all__ = [
    "LOG_DATEFMT",
    "LOG_FORMAT",
    "METRICS_LOGGER",
    "append_jsonl",
    "log_path",
    "rotate_log",
    "setup_logging",
    "write_json_atomic",
]
