"""
Dataset ingestion and preprocessing

JSON Lines in, one object per line. Records are streamed in file order;
malformed lines are reported with their line number.
"""

import json
import logging
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, Iterator, List, Optional, Sequence

from semsim.errors import DataError
from semsim.tokenizer import TokenSequence, Vocab, encode

logger = logging.getLogger(__name__)

ESCAPES = {'n': '\n', 't': '\t', '"': '"'}
_ESCAPE_RE = re.compile(r'\\([nt"])')
_SPACE_RE = re.compile(r'\s+')


@dataclass
class DatasetRecord:
    document: str = ''
    summary: Optional[str] = None
    id: Optional[str] = None
    generated: Optional[str] = None

    def to_dict(self) -> Dict:
        row = {'id': self.id, 'document': self.document}
        if self.summary is not None:
            row['summary'] = self.summary
        if self.generated is not None:
            row['generated'] = self.generated
        return row


@dataclass
class Sample:
    """A tokenized training pair"""
    doc: TokenSequence
    ref: TokenSequence
    sample_id: str = ''


def _parse_line(line: str, line_number: int, required: Sequence[str]) -> DatasetRecord:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as e:
        raise DataError(f"invalid JSON: {e.msg}", line_number=line_number) from e
    if not isinstance(obj, dict):
        raise DataError("expected a JSON object", line_number=line_number)
    for key in required:
        value = obj.get(key)
        if not isinstance(value, str) or not value.strip():
            raise DataError(f"missing or empty field '{key}'", line_number=line_number)
    return DatasetRecord(
        document=obj.get('document', ''),
        summary=obj.get('summary'),
        id=str(obj['id']) if obj.get('id') is not None else f"line-{line_number}",
        generated=obj.get('generated'),
    )


def load_jsonl(path, required: Sequence[str] = ('document',),
               errors: Optional[List[DataError]] = None) -> Iterator[DatasetRecord]:
    """
    Stream records from a JSON Lines file

    Args:
        path: input file
        required: fields that must be present and non-empty
        errors: when given, malformed lines are appended here and skipped;
            otherwise the first malformed line raises

    Raises:
        DataError: missing file, or a malformed line when `errors` is None
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"input file not found: {path}")
    with open(path, encoding='utf-8') as handle:
        for line_number, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                yield _parse_line(line, line_number, required)
            except DataError as e:
                if errors is None:
                    raise
                logger.warning(f"   ⚠️ {path.name}: {e}")
                errors.append(e)


def write_jsonl(path, rows: Iterable[Dict]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', encoding='utf-8') as handle:
        for row in rows:
            handle.write(json.dumps(row, ensure_ascii=False) + '\n')
    return path


def clean_text(text: str) -> str:
    """Unescape literal \\n, \\t and \\", then collapse whitespace"""
    while True:
        unescaped = _ESCAPE_RE.sub(lambda m: ESCAPES[m.group(1)], text)
        if unescaped == text:
            break
        text = unescaped
    return _SPACE_RE.sub(' ', text).strip()


def preprocess(record: DatasetRecord) -> DatasetRecord:
    return DatasetRecord(
        document=clean_text(record.document),
        summary=clean_text(record.summary) if record.summary is not None else None,
        id=record.id,
        generated=clean_text(record.generated) if record.generated is not None else None,
    )


def stream_records(path, required: Sequence[str] = ('document',),
                   errors: Optional[List[DataError]] = None) -> Iterator[DatasetRecord]:
    """Preprocessed records, one line at a time; nothing is held beyond the current record"""
    for record in load_jsonl(path, required=required, errors=errors):
        yield preprocess(record)


def tokenize_records(records: Iterable[DatasetRecord], vocab: Vocab) -> List[Sample]:
    """Encode document/summary pairs with their roles"""
    samples = []
    for record in records:
        if record.summary is None:
            raise DataError(f"record {record.id} has no summary")
        samples.append(Sample(
            doc=encode(record.document, vocab, role='document'),
            ref=encode(record.summary, vocab, role='reference'),
            sample_id=record.id or '',
        ))
    return samples


def corpus_texts(records: Iterable[DatasetRecord]) -> Iterator[str]:
    """Documents and summaries, the BPE training corpus"""
    for record in records:
        yield record.document
        if record.summary:
            yield record.summary
