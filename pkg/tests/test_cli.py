import json

import pandas as pd
import pytest

from semsim.cli import build_parser, config_overrides, run_command
from semsim.config import CONFIG_ENV_VAR
from semsim.data import load_jsonl, write_jsonl
from tests.conftest import FIXTURE_PATH, RESPONSES_PATH

TINY_CONF = """
paths.data = {data}
tokenizer.target_vocab = 200
model.encoder_layers = 1
model.decoder_layers = 1
model.d_model = 16
model.heads = 2
model.ffn_dim = 32
model.precision = 64
train.lr = 1e-3
train.dropout = 0.0
train.update_freq = 1
train.epochs = 1
train.max_steps = 2
train.objective = ml_only
search.beam = 2
search.min_len = 6
search.max_len = 12
"""


@pytest.fixture(autouse=True)
def workspace(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    monkeypatch.delenv(CONFIG_ENV_VAR, raising=False)
    return tmp_path


def execution_summary(report_dir):
    paths = sorted(report_dir.glob('execution_*.json'))
    assert len(paths) == 1
    return json.loads(paths[0].read_text())


@pytest.mark.parametrize('argv', [
    ['summarize'],
    ['evaluate', '--input', 'x.jsonl', '--bogus'],
    ['evaluate'],
    [],
])
def test_usage_errors_exit_2(argv):
    assert run_command(argv) == 2


def test_flags_become_overrides():
    args = build_parser().parse_args(['train', '--lr', '0.01', '--objective', 'semsim_only', '--max-steps', '5'])
    assert config_overrides(args) == {'train.lr': '0.01', 'train.objective': 'semsim_only', 'train.max_steps': '5'}
    args = build_parser().parse_args(['gradcheck', '--precision', '32'])
    assert config_overrides(args) == {}


def test_evaluate_identical_pairs(workspace):
    rows = [{'id': str(i), 'document': 'doc', 'summary': text, 'generated': text}
            for i, text in enumerate(['a short summary', 'another one here'])]
    data = write_jsonl(workspace / 'pairs.jsonl', rows)
    assert run_command(['evaluate', '--input', str(data), '--report-dir', 'reports']) == 0

    summaries = list((workspace / 'reports').glob('rouge_*.json'))
    assert len(summaries) == 1
    means = json.loads(summaries[0].read_text())
    assert means['samples'] == 2
    assert means['rouge1_f1'] == means['rouge2_f1'] == means['rougeL_f1'] == 1.0
    assert len(list((workspace / 'reports').glob('rouge_*.parquet'))) == 1
    assert execution_summary(workspace / 'reports')['success'] is True


def test_missing_input_fails(workspace):
    assert run_command(['evaluate', '--input', 'absent.jsonl', '--report-dir', 'reports']) == 1
    summary = execution_summary(workspace / 'reports')
    assert summary['success'] is False
    assert any('not found' in error for error in summary['errors'])


def test_malformed_lines_are_reported(workspace):
    path = workspace / 'pairs.jsonl'
    path.write_text('{"summary": "a b", "generated": "a b"}\nnot json\n')
    assert run_command(['evaluate', '--input', str(path), '--report-dir', 'reports']) == 1
    errors = execution_summary(workspace / 'reports')['errors']
    assert len(errors) == 1 and 'line 2' in errors[0]


def test_stats_sweep(workspace):
    code = run_command(['stats', '--input', str(RESPONSES_PATH), '--sweep', '--plot', '--pairs', 'ours:baseline',
                        '--report-dir', 'reports'])
    assert code == 0
    sweep = pd.read_csv(next((workspace / 'reports').glob('sweep_*.csv')))
    assert len(sweep) == 9
    assert list(sweep['truncate_pct']) == list(range(0, 45, 5))
    assert len(list((workspace / 'reports').glob('stats_*.csv'))) == 1
    assert len(list((workspace / 'reports').glob('sweep_*.png'))) == 1


def test_score_without_vocab_fails(workspace):
    assert run_command(['score', '--reference', 'a', '--candidate', 'b', '--report-dir', 'reports']) == 1


def test_bad_config_value_fails(workspace):
    conf = workspace / 'bad.conf'
    conf.write_text('train.lr = fast\n')
    assert run_command(['--config', str(conf), 'stats', '--input', str(RESPONSES_PATH),
                        '--report-dir', 'reports']) == 1


@pytest.mark.slow
def test_gradcheck_command(workspace):
    conf = workspace / 'tiny.conf'
    conf.write_text(TINY_CONF.format(data=FIXTURE_PATH))
    code = run_command(['--config', str(conf), 'gradcheck', '--precision', '64', '--vocab-size', '24',
                        '--samples-per-tensor', '2', '--report-dir', 'reports'])
    assert code == 0
    assert execution_summary(workspace / 'reports')['metrics']['max_rel_error'] <= 1e-5


@pytest.mark.slow
def test_vocab_train_generate_evaluate(workspace):
    conf = workspace / 'tiny.conf'
    conf.write_text(TINY_CONF.format(data=FIXTURE_PATH))
    base = ['--config', str(conf)]

    assert run_command(base + ['vocab']) == 0
    assert (workspace / 'work' / 'vocab.txt').exists()

    assert run_command(base + ['train']) == 0
    assert (workspace / 'work' / 'checkpoints' / 'final.ckpt').exists()

    assert run_command(base + ['generate', '--input', str(FIXTURE_PATH), '--output', 'generated.jsonl']) == 0
    generated = list(load_jsonl(workspace / 'generated.jsonl', required=('document', 'summary', 'generated')))
    assert len(generated) == 16

    assert run_command(base + ['evaluate', '--input', 'generated.jsonl']) == 0
    assert list((workspace / 'work' / 'reports').glob('rouge_*.json'))


MEMORIZE_CONF = """
paths.data = {data}
tokenizer.target_vocab = 300
model.encoder_layers = 2
model.decoder_layers = 2
model.d_model = 64
model.heads = 4
model.ffn_dim = 128
model.precision = 32
train.lr = 1e-3
train.dropout = 0.0
train.update_freq = 1
train.epochs = 2000
train.max_steps = 1500
train.log_every = 250
train.objective = ml_only
search.min_len = 1
search.max_len = 60
"""


@pytest.mark.slow
def test_memorized_pairs_score_perfect_rouge(workspace):
    pairs = write_jsonl(workspace / 'pairs.jsonl', [r.to_dict() for r in list(load_jsonl(FIXTURE_PATH))[:8]])
    conf = workspace / 'memorize.conf'
    conf.write_text(MEMORIZE_CONF.format(data=pairs))
    base = ['--config', str(conf)]

    assert run_command(base + ['vocab']) == 0
    assert run_command(base + ['train']) == 0
    assert run_command(base + ['generate', '--input', str(pairs), '--output', 'generated.jsonl', '--greedy',
                               '--no-trigram-block']) == 0
    assert run_command(base + ['evaluate', '--input', 'generated.jsonl']) == 0

    means = json.loads(next((workspace / 'work' / 'reports').glob('rouge_*.json')).read_text())
    assert means['samples'] == 8
    assert means['rouge1_f1'] == 1.0


def test_generate_counts_streamed_rows(workspace):
    conf = workspace / 'tiny.conf'
    conf.write_text(TINY_CONF.format(data=FIXTURE_PATH))
    base = ['--config', str(conf)]
    reports = workspace / 'work' / 'reports'
    assert run_command(base + ['vocab']) == 0
    assert run_command(base + ['train']) == 0

    docs = workspace / 'docs.jsonl'
    docs.write_text('{"id": "a", "document": "the council met"}\nnot json\n{"id": "b", "document": "rain"}\n')
    for path in reports.glob('execution_*.json'):
        path.unlink()
    assert run_command(base + ['generate', '--input', str(docs), '--output', 'out.jsonl']) == 1
    summary = execution_summary(reports)
    assert summary['metrics']['generated'] == 2
    assert len(summary['errors']) == 1 and 'line 2' in summary['errors'][0]
    assert [r.id for r in load_jsonl(workspace / 'out.jsonl', required=('generated',))] == ['a', 'b']
