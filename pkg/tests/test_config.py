import pytest
import yaml

from tokenfold.context import load_run_config
from tokenfold.domain.exceptions import ConfigError
from tokenfold.infra import get_settings


def _write(tmp_path, data) -> str:
    path = tmp_path / "run.yaml"
    path.write_text(yaml.safe_dump(data))
    return str(path)


def test_default_config_loads():
    cfg = load_run_config()
    assert cfg.seed == 0
    assert cfg.schedule.T == cfg.dit.T == cfg.sampler.T == 200
    assert cfg.tokenizer.K == 256
    assert cfg.sampler.gate_mode == "per-token"
    assert str(cfg.paths.data_dir) == "data"


def test_overrides_are_validated():
    cfg = load_run_config(overrides={"sampler.length": 128, "seed": 7, "sampler.eps_cache": None})
    assert cfg.sampler.length == 128
    assert cfg.seed == 7
    assert cfg.sampler.eps_cache == 0.05
    with pytest.raises(ConfigError):
        load_run_config(overrides={"sampler.length": 1})
    with pytest.raises(ConfigError):
        load_run_config(overrides={"sampler.gate_mode": "sometimes"})


def test_step_counts_must_agree():
    with pytest.raises(ConfigError, match="must match"):
        load_run_config(overrides={"sampler.T": 100})


def test_heads_must_divide_width():
    with pytest.raises(ConfigError):
        load_run_config(overrides={"dit.n_heads": 3})


def test_missing_seed(tmp_path):
    with pytest.raises(ConfigError):
        load_run_config(_write(tmp_path, {"sampler": {"seed": 0}}))


def test_minimal_file(tmp_path):
    cfg = load_run_config(_write(tmp_path, {"seed": 3, "sampler": {"seed": 3, "length": 32}}))
    assert cfg.sampler.length == 32
    assert cfg.decoder.hidden == 256


def test_missing_and_empty_files(tmp_path):
    with pytest.raises(ConfigError):
        load_run_config(tmp_path / "absent.yaml")
    empty = tmp_path / "empty.yaml"
    empty.write_text("")
    with pytest.raises(ConfigError):
        load_run_config(empty)


def test_placeholder_default(tmp_path, monkeypatch):
    path = tmp_path / "run.yaml"
    path.write_text("seed: ${RUN_SEED:5}\nsampler:\n  seed: 0\n")
    assert load_run_config(path).seed == 5
    monkeypatch.setenv("RUN_SEED", "9")
    assert load_run_config(path).seed == 9


def test_data_dir_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("TOKENFOLD_DATA_DIR", str(tmp_path))
    get_settings.cache_clear()
    cfg = load_run_config()
    assert cfg.paths.data_dir == tmp_path
    assert cfg.paths.model_path == tmp_path / "model.pt"
    assert cfg.paths.cache_dir == tmp_path / "cache"
