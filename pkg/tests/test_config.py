"""Tests for configuration loading."""

from pathlib import Path

import pytest

from hostwise import config as config_module
from hostwise.config import Config, ConfigError, get_config, load_config, reload_config

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def write(tmp_path: Path, text: str) -> Path:
    path = tmp_path / "hostwise.toml"
    path.write_text(text, encoding="utf-8")
    return path


class TestLoadConfig:
    """Test suite for load_config."""

    def test_defaults(self) -> None:
        config = load_config(CONFIGS / "crawl.toml", environ={})
        assert config.workbench.size == 512_000_000
        assert config.sieve.size == 256_000_000
        assert config.politeness.host_delay_ms == 4000
        assert config.fetch.max_body_bytes == 8 * 2**20

    def test_units(self, tmp_path) -> None:
        path = write(tmp_path, '[workbench]\nsize = "1MiB"\n[sieve]\nsize = "2MB"\n')
        config = load_config(path, environ={})
        assert config.workbench.size == 2**20
        assert config.sieve.size == 2_000_000

    def test_env_overrides_file(self, tmp_path) -> None:
        path = write(tmp_path, "[politeness]\nhost_delay_ms = 100\n")
        environ = {
            "HOSTWISE_POLITENESS_HOST_DELAY_MS": "8000",
            "HOSTWISE_AGENT_SEEDS": "http://a.test/, http://b.test/",
            "HOSTWISE_POLITENESS_HOST_OVERRIDES": "a.test=10,b.test=20",
            "HOSTWISE_FETCH_ROBOTS_FALLBACK": "disallow",
        }
        config = load_config(path, environ=environ)
        assert config.politeness.host_delay_ms == 8000
        assert config.agent.seeds == ["http://a.test/", "http://b.test/"]
        assert config.politeness.host_overrides == {"a.test": 10, "b.test": 20}
        assert config.fetch.robots_fallback == "disallow"

    def test_overrides(self, tmp_path) -> None:
        path = write(tmp_path, "[fetch]\nworkers = 8\n")
        config = load_config(path, overrides={"fetch": {"workers": 16}}, environ={})
        assert config.fetch.workers == 16

    def test_errors_name_every_key(self, tmp_path) -> None:
        path = write(
            tmp_path,
            '[fetch]\nworkers = 0\nrobots_fallback = "maybe"\n[agent]\nbogus = 1\n',
        )
        with pytest.raises(ConfigError) as info:
            load_config(path, environ={})
        paths = {error.split(":", 1)[0] for error in info.value.errors}
        assert {"fetch.workers", "fetch.robots_fallback", "agent.bogus"} <= paths

    def test_unknown_section(self, tmp_path) -> None:
        with pytest.raises(ConfigError):
            load_config(write(tmp_path, "[nonsense]\nx = 1\n"), environ={})

    def test_missing_explicit_file(self, tmp_path) -> None:
        with pytest.raises(ConfigError):
            load_config(tmp_path / "absent.toml", environ={})

    def test_bad_toml(self, tmp_path) -> None:
        with pytest.raises(ConfigError):
            load_config(write(tmp_path, "[agent\n"), environ={})

    def test_synthetic_transport_needs_a_spec(self, tmp_path) -> None:
        path = write(tmp_path, '[fetch]\ntransport = "synthetic"\n')
        with pytest.raises(ConfigError):
            load_config(path, environ={})

    def test_spec_file_reference(self, tmp_path) -> None:
        spec_file = CONFIGS / "synthweb.toml"
        path = write(
            tmp_path,
            f'[fetch]\ntransport = "synthetic"\n[synthetic]\nspec_file = "{spec_file}"\n'
            "host_count = 7\n",
        )
        config = load_config(path, environ={})
        assert config.synthetic.host_count == 7
        assert config.synthetic.seed == 1

    def test_missing_spec_file(self, tmp_path) -> None:
        path = write(tmp_path, '[synthetic]\nspec_file = "absent.toml"\n')
        with pytest.raises(ConfigError) as info:
            load_config(path, environ={})
        assert info.value.errors[0].startswith("synthetic.spec_file:")

    @pytest.mark.parametrize("value", ["0", "1.0", "1.5"])
    def test_gc_threshold_is_a_proper_fraction(self, tmp_path, value) -> None:
        path = write(tmp_path, f"[virtualizer]\ngc_threshold = {value}\n")
        with pytest.raises(ConfigError) as info:
            load_config(path, environ={})
        assert info.value.errors[0].startswith("virtualizer.gc_threshold:")

    def test_cluster_must_list_this_agent(self, tmp_path) -> None:
        path = write(tmp_path, '[agent]\nname = "x"\n[cluster]\nagents = { y = "127.0.0.1:1" }\n')
        with pytest.raises(ConfigError):
            load_config(path, environ={})


@pytest.mark.parametrize("name", ["crawl", "politeness_sweep", "thread_scaling"])
def test_shipped_configs_load(name) -> None:
    config = load_config(CONFIGS / f"{name}.toml", environ={})
    assert isinstance(config, Config)


def test_storage_paths(tmp_path) -> None:
    config = Config.model_validate({"agent": {"name": "a1", "data_dir": str(tmp_path)}})
    assert config.sieve_dir == tmp_path / "a1" / "sieve"
    assert config.virtualizer_dir == tmp_path / "a1" / "virtualizer"
    assert config.store_dir == tmp_path / "a1" / "store"


def test_global_config(tmp_path, monkeypatch) -> None:
    monkeypatch.setattr(config_module, "_config", None)
    monkeypatch.setattr(config_module, "default_data_dir", lambda: tmp_path)
    assert get_config() is get_config()
    path = write(tmp_path, "[fetch]\nworkers = 3\n")
    assert reload_config(path).fetch.workers == 3
    assert get_config().fetch.workers == 3
