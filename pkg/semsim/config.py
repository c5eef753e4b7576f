"""
Application configuration

Precedence, lowest first: dataclass defaults, the key = value file
(`--config`, else $SEMSIM_CONFIG, else config/semsim.conf), CLI flags.
Keys are `<section>.<field>`, e.g. `train.lr = 3e-5`.
"""

import logging
import os
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Dict, Optional

from dotenv import dotenv_values, load_dotenv

from semsim.decoder_search import SearchConfig
from semsim.errors import ConfigError
from semsim.semsim_scorer import ScorerConfig
from semsim.seq2seq_model import ModelConfig
from semsim.tokenizer import Vocab
from semsim.trainer import TrainConfig

logger = logging.getLogger(__name__)

DEFAULT_CONFIG_PATH = Path('config/semsim.conf')
CONFIG_ENV_VAR = 'SEMSIM_CONFIG'

_TRUE = {'1', 'true', 'yes', 'on'}
_FALSE = {'0', 'false', 'no', 'off'}


@dataclass
class TokenizerConfig:
    target_vocab: int = 400


@dataclass
class PathsConfig:
    data: str = 'data/fixture.jsonl'
    vocab: str = 'work/vocab.txt'
    scorer: str = 'work/scorer.ckpt'
    checkpoints: str = 'work/checkpoints'
    reports: str = 'work/reports'

    def ensure_output_dirs(self) -> None:
        for directory in (self.checkpoints, self.reports):
            Path(directory).mkdir(parents=True, exist_ok=True)


@dataclass
class AppConfig:
    paths: PathsConfig = field(default_factory=PathsConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    search: SearchConfig = field(default_factory=SearchConfig)
    scorer: ScorerConfig = field(default_factory=ScorerConfig)
    tokenizer: TokenizerConfig = field(default_factory=TokenizerConfig)
    source: Optional[str] = None

    def model_config(self, vocab: Vocab) -> ModelConfig:
        """Model settings bound to a vocabulary, with the training dropout"""
        return replace(self.model, vocab_size=vocab.size, dropout=self.train.dropout, pad_id=vocab.pad_id,
                       bos_id=vocab.bos_id, eos_id=vocab.eos_id)

    def to_dict(self) -> Dict:
        return {name: getattr(self, name).__dict__.copy() for name in SECTIONS}


SECTIONS = ('paths', 'model', 'train', 'search', 'scorer', 'tokenizer')


def _coerce(raw: str, target_type, key: str):
    text = raw.strip()
    try:
        if target_type is bool:
            lowered = text.lower()
            if lowered in _TRUE:
                return True
            if lowered in _FALSE:
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        if target_type is int:
            return int(text)
        if target_type is float:
            return float(text)
        return text
    except ValueError as e:
        raise ConfigError(f"bad value for {key}: {e}") from e


def apply_settings(config: AppConfig, settings: Dict[str, Optional[str]], origin: str) -> AppConfig:
    """Return a copy of `config` with `section.field` string settings applied"""
    grouped: Dict[str, Dict] = {}
    for key, raw in settings.items():
        section, _, name = key.partition('.')
        if section not in SECTIONS:
            raise ConfigError(f"unknown config section in '{key}' ({origin})")
        types = {f.name: f.type for f in fields(getattr(config, section))}
        if name not in types:
            raise ConfigError(f"unknown config key '{key}' ({origin})")
        if raw is None:
            raise ConfigError(f"config key '{key}' has no value ({origin})")
        grouped.setdefault(section, {})[name] = _coerce(str(raw), types[name], key)

    updated = {section: replace(getattr(config, section), **values) for section, values in grouped.items()}
    return replace(config, **updated)


def resolve_config_path(explicit: Optional[str] = None) -> Optional[Path]:
    if explicit:
        path = Path(explicit)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        return path
    load_dotenv()
    from_env = os.getenv(CONFIG_ENV_VAR)
    if from_env:
        path = Path(from_env)
        if not path.exists():
            raise ConfigError(f"{CONFIG_ENV_VAR} points to a missing file: {path}")
        return path
    return DEFAULT_CONFIG_PATH if DEFAULT_CONFIG_PATH.exists() else None


def load_config(path: Optional[str] = None, overrides: Optional[Dict[str, str]] = None) -> AppConfig:
    """
    Build the AppConfig

    Args:
        path: explicit config file
        overrides: `section.field` values from the command line

    Raises:
        ConfigError: unknown key, uncoercible value or invalid combination
    """
    config = AppConfig()
    config_path = resolve_config_path(path)
    if config_path is None:
        logger.warning("   ⚠️ No config file found, using defaults")
    else:
        config = apply_settings(config, dotenv_values(config_path), str(config_path))
        config.source = str(config_path)
    if overrides:
        config = apply_settings(config, overrides, 'command line')
    return config
