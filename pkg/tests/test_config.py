import logging

import pytest

from semsim.config import (CONFIG_ENV_VAR, AppConfig, PathsConfig, apply_settings, load_config,
                           resolve_config_path)
from semsim.errors import ConfigError
from tests.conftest import REPO_ROOT


@pytest.fixture(autouse=True)
def isolated(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    monkeypatch.delenv(CONFIG_ENV_VAR, raising=False)


def write_conf(path, text):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)
    return path


def test_defaults_when_no_file(caplog):
    with caplog.at_level(logging.WARNING):
        config = load_config()
    assert config.source is None
    assert config.train.lr == 3e-5 and config.search.max_len == 140
    assert 'No config file' in caplog.text


def test_file_values_are_coerced(tmp_path):
    path = write_conf(tmp_path / 'run.conf', "# comment\ntrain.lr = 0.01\ntrain.epochs = 3\n"
                                             "search.trigram_block = false\nscorer.pooling = first\n")
    config = load_config(str(path))
    assert config.train.lr == 0.01 and config.train.epochs == 3
    assert config.search.trigram_block is False
    assert config.scorer.pooling == 'first'
    assert config.source == str(path)


def test_overrides_win_over_file(tmp_path):
    path = write_conf(tmp_path / 'run.conf', "train.lr = 0.01\n")
    config = load_config(str(path), overrides={'train.lr': '0.5', 'search.beam': '2'})
    assert config.train.lr == 0.5 and config.search.beam == 2


def test_env_var_selects_file(tmp_path, monkeypatch):
    path = write_conf(tmp_path / 'env.conf', "train.seed = 9\n")
    monkeypatch.setenv(CONFIG_ENV_VAR, str(path))
    assert load_config().train.seed == 9


def test_env_var_to_missing_file(tmp_path, monkeypatch):
    monkeypatch.setenv(CONFIG_ENV_VAR, str(tmp_path / 'nope.conf'))
    with pytest.raises(ConfigError):
        load_config()


def test_default_location_is_used(tmp_path):
    write_conf(tmp_path / 'config' / 'semsim.conf', "model.d_model = 32\n")
    assert resolve_config_path() is not None
    assert load_config().model.d_model == 32


def test_explicit_missing_file(tmp_path):
    with pytest.raises(ConfigError, match='not found'):
        load_config(str(tmp_path / 'missing.conf'))


@pytest.mark.parametrize('settings', [
    {'trian.lr': '1'},
    {'train.learning_rate': '1'},
    {'train.lr': 'fast'},
    {'search.trigram_block': 'maybe'},
    {'train.lr': '-1'},
    {'search.min_len': '500'},
    {'train.objective': 'rl'},
])
def test_invalid_settings_rejected(settings):
    with pytest.raises(ConfigError):
        apply_settings(AppConfig(), settings, 'test')


def test_apply_settings_returns_copy():
    base = AppConfig()
    updated = apply_settings(base, {'train.lr': '0.1'}, 'test')
    assert updated.train.lr == 0.1 and base.train.lr == 3e-5


def test_model_config_binds_vocab(vocab):
    config = apply_settings(AppConfig(), {'train.dropout': '0.0'}, 'test')
    model_config = config.model_config(vocab)
    assert model_config.vocab_size == vocab.size
    assert (model_config.pad_id, model_config.bos_id, model_config.eos_id) == (0, 1, 2)
    assert model_config.dropout == 0.0


def test_bundled_config_loads():
    config = load_config(str(REPO_ROOT / 'config' / 'semsim.conf'))
    assert config.train.objective == 'composite'
    assert config.search.min_len <= config.search.max_len


def test_ensure_output_dirs(tmp_path):
    paths = PathsConfig(checkpoints=str(tmp_path / 'c'), reports=str(tmp_path / 'r'))
    paths.ensure_output_dirs()
    assert (tmp_path / 'c').is_dir() and (tmp_path / 'r').is_dir()
