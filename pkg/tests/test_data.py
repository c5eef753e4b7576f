import json
import tracemalloc
import types

import pytest

from local_analytics.rouge_eval import RougeAccumulator
from semsim.data import (DatasetRecord, clean_text, corpus_texts, load_jsonl, preprocess, stream_records,
                         tokenize_records, write_jsonl)
from semsim.errors import DataError
from tests.conftest import FIXTURE_PATH


def lines_file(tmp_path, lines):
    path = tmp_path / 'input.jsonl'
    path.write_text('\n'.join(lines) + '\n', encoding='utf-8')
    return path


def pair(i):
    return json.dumps({'id': f"p{i}", 'document': f"document {i}", 'summary': f"summary {i}"})


def test_load_is_lazy(tmp_path):
    assert isinstance(load_jsonl(lines_file(tmp_path, [pair(0)])), types.GeneratorType)


def test_empty_file_yields_nothing(tmp_path):
    path = tmp_path / 'empty.jsonl'
    path.write_text('')
    assert list(load_jsonl(path)) == []


def test_single_record(tmp_path):
    records = list(load_jsonl(lines_file(tmp_path, [pair(0)]), required=('document', 'summary')))
    assert records == [DatasetRecord(document='document 0', summary='summary 0', id='p0')]


def test_malformed_line_is_reported_and_skipped(tmp_path):
    lines = [pair(0), pair(1), '{"id": "p2", "document": ', pair(3), pair(4)]
    errors = []
    records = list(load_jsonl(lines_file(tmp_path, lines), required=('document', 'summary'), errors=errors))
    assert [r.id for r in records] == ['p0', 'p1', 'p3', 'p4']
    assert len(errors) == 1 and errors[0].line_number == 3
    assert 'line 3' in str(errors[0])


def test_malformed_line_raises_without_collector(tmp_path):
    with pytest.raises(DataError, match='line 2'):
        list(load_jsonl(lines_file(tmp_path, [pair(0), '[1, 2]'])))


@pytest.mark.parametrize('line', ['{"document": ""}', '{"document": "x"}', '{"summary": "y"}'])
def test_required_fields(tmp_path, line):
    with pytest.raises(DataError):
        list(load_jsonl(lines_file(tmp_path, [line]), required=('document', 'summary')))


def test_missing_id_gets_line_number(tmp_path):
    records = list(load_jsonl(lines_file(tmp_path, ['', '{"document": "text"}'])))
    assert records[0].id == 'line-2'


def test_missing_file(tmp_path):
    with pytest.raises(DataError, match='not found'):
        list(load_jsonl(tmp_path / 'absent.jsonl'))


def test_clean_text_unescapes_and_collapses():
    assert clean_text('a\\nb') == 'a b'
    assert clean_text('  say \\"hi\\"\\t now  ') == 'say "hi" now'


@pytest.mark.parametrize('text', ['a\\nb', ' x \\t y ', 'plain text', 'multi\n\nline'])
def test_clean_text_is_idempotent(text):
    assert clean_text(clean_text(text)) == clean_text(text)


def test_preprocess_keeps_missing_fields():
    record = preprocess(DatasetRecord(document='one\\ntwo', id='r1'))
    assert record == DatasetRecord(document='one two', summary=None, id='r1')


def test_write_and_reload(tmp_path):
    rows = [DatasetRecord(document='d', summary='s', id='1', generated='g').to_dict()]
    path = write_jsonl(tmp_path / 'out' / 'rows.jsonl', rows)
    assert list(load_jsonl(path, required=('document', 'summary', 'generated')))[0].generated == 'g'


def test_tokenize_records_requires_summary(vocab):
    with pytest.raises(DataError):
        tokenize_records([DatasetRecord(document='text', id='x')], vocab)


def test_fixture_corpus(fixture_records, samples):
    assert len(fixture_records) == 16
    assert all('\\n' not in r.document for r in fixture_records)
    assert len(list(corpus_texts(fixture_records))) == 32
    assert samples[0].doc.role == 'document' and samples[0].ref.role == 'reference'
    assert [s.sample_id for s in samples] == [r.id for r in fixture_records]


def test_fixture_file_is_well_formed():
    errors = []
    assert len(list(load_jsonl(FIXTURE_PATH, required=('document', 'summary'), errors=errors))) == 16
    assert errors == []


def test_stream_records_preprocesses_lazily(tmp_path):
    path = lines_file(tmp_path, [json.dumps({'id': 'a', 'document': 'one\\n  two', 'summary': ' s '})])
    stream = stream_records(path, required=('document', 'summary'))
    assert isinstance(stream, types.GeneratorType)
    assert [(r.document, r.summary) for r in stream] == [('one two', 's')]


def _score_file(path):
    accumulator = RougeAccumulator()
    for record in stream_records(path, required=('summary', 'generated')):
        accumulator.add(record.summary, record.generated, record.id)
    return accumulator.report()


def test_streamed_evaluation_memory_stays_below_file_size(tmp_path):
    filler = ' '.join(['harbor council storm wall'] * 2000)
    rows = [{'id': str(i), 'document': filler, 'summary': f"wall {i} rebuilt", 'generated': f"wall {i} rebuilt"}
            for i in range(500)]
    path = write_jsonl(tmp_path / 'big.jsonl', rows)
    del rows
    _score_file(write_jsonl(tmp_path / 'warm.jsonl', [{'summary': 'a', 'generated': 'a'}]))

    tracemalloc.start()
    try:
        report = _score_file(path)
        _, peak = tracemalloc.get_traced_memory()
    finally:
        tracemalloc.stop()
    assert report.count == 500
    assert peak < path.stat().st_size / 10
