import json
import logging
from pathlib import Path

import pytest

from hostwise.utils import persistence


def test_rotate_log_keeps_last_lines(tmp_path: Path) -> None:
    log = tmp_path / "agent.log"
    log.write_text("first\nsecond\nthird\n", encoding="utf-8")

    persistence.rotate_log(log, max_lines=2)
    assert log.read_text(encoding="utf-8").splitlines() == ["second", "third"]

    persistence.rotate_log(tmp_path / "missing.log", max_lines=1)


def test_setup_logging_writes_file(tmp_path: Path) -> None:
    log = persistence.log_path(tmp_path, "agent-7")
    assert log == tmp_path / "logs" / "agent-7.log"

    persistence.setup_logging("debug", log)
    logging.getLogger("hostwise.test").debug("hello from the test")
    for handler in logging.getLogger("hostwise").handlers:
        handler.flush()
    line = log.read_text(encoding="utf-8").splitlines()[-1]
    assert line.endswith("hostwise.test - DEBUG - hello from the test")

    # Reconfiguring replaces handlers instead of stacking them.
    persistence.setup_logging("info")
    assert len(logging.getLogger("hostwise").handlers) == 1


def test_write_json_atomic(tmp_path: Path) -> None:
    path = tmp_path / "state" / "sieve.json"
    persistence.write_json_atomic(path, {"b": 1, "a": [1, 2]})
    persistence.write_json_atomic(path, {"b": 2})
    assert json.loads(path.read_text(encoding="utf-8")) == {"b": 2}
    assert not path.with_suffix(".json.tmp").exists()


def test_append_jsonl(tmp_path: Path) -> None:
    path = tmp_path / "metrics" / "agent.jsonl"
    persistence.append_jsonl(path, {"pages": 1})
    persistence.append_jsonl(path, {"pages": 2})
    assert [json.loads(line) for line in path.read_text(encoding="utf-8").splitlines()] == [
        {"pages": 1},
        {"pages": 2},
    ]


@pytest.fixture(autouse=True)
def _reset_logging():
    yield
    persistence.setup_logging("warning")
