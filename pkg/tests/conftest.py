"""Shared fixtures: bundled corpus, trained vocabulary, tiny seeded models"""

from pathlib import Path

import numpy as np
import pytest

from semsim.data import load_jsonl, preprocess, tokenize_records
from semsim.semsim_scorer import ScorerConfig, init_scorer
from semsim.seq2seq_model import ModelConfig, init_model
from semsim.tokenizer import train_bpe

REPO_ROOT = Path(__file__).resolve().parent.parent
FIXTURE_PATH = REPO_ROOT / 'data' / 'fixture.jsonl'
RESPONSES_PATH = REPO_ROOT / 'data' / 'responses.csv'


@pytest.fixture(scope='session')
def fixture_records():
    return [preprocess(r) for r in load_jsonl(FIXTURE_PATH, required=('document', 'summary'))]


@pytest.fixture(scope='session')
def vocab(fixture_records):
    texts = []
    for record in fixture_records:
        texts.extend([record.document, record.summary])
    return train_bpe(texts, 400)


@pytest.fixture(scope='session')
def samples(fixture_records, vocab):
    return tokenize_records(fixture_records, vocab)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def tiny_config(vocab_size: int, precision: int = 64, d_model: int = 16, layers: int = 1) -> ModelConfig:
    return ModelConfig(vocab_size=vocab_size, encoder_layers=layers, decoder_layers=layers, d_model=d_model,
                       heads=2, ffn_dim=2 * d_model, dropout=0.0, max_positions=256, precision=precision)


def tiny_scorer_config(vocab_size: int, precision: int = 64, d_model: int = 8) -> ScorerConfig:
    return ScorerConfig(vocab_size=vocab_size, layers=1, d_model=d_model, heads=2, ffn_dim=2 * d_model,
                        max_positions=256, precision=precision)


@pytest.fixture
def tiny_model(vocab):
    return init_model(tiny_config(vocab.size), seed=0).eval()


@pytest.fixture
def tiny_scorer(vocab):
    return init_scorer(tiny_scorer_config(vocab.size), seed=7)
