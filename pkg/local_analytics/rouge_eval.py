"""
ROUGE-1 / ROUGE-2 / ROUGE-L F1 for generated summaries

ROUGE-N uses clipped (multiset) n-gram counts; ROUGE-L is the longest common
subsequence over the whole summary, not the sentence-level union variant.
"""

import logging
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import pandas as pd
from tabulate import tabulate

from semsim.errors import DataError

logger = logging.getLogger(__name__)

VARIANTS = ('rouge1', 'rouge2', 'rougeL')
_ALNUM_RE = re.compile(r'[a-z0-9]+')

Tokenization = Union[str, Callable[[str], List[str]], None]


@dataclass
class RougeScore:
    precision: float = 0.0
    recall: float = 0.0
    f1: float = 0.0

    @classmethod
    def from_counts(cls, overlap: int, generated_total: int, reference_total: int) -> "RougeScore":
        if overlap == 0 or generated_total == 0 or reference_total == 0:
            return cls()
        return cls(precision=overlap / generated_total, recall=overlap / reference_total,
                   f1=2 * overlap / (generated_total + reference_total))


@dataclass
class RougeReport:
    per_sample: pd.DataFrame
    means: Dict[str, RougeScore] = field(default_factory=dict)
    count: int = 0

    def table(self) -> str:
        rows = [[variant, f"{s.precision:.4f}", f"{s.recall:.4f}", f"{s.f1:.4f}"] for variant, s in self.means.items()]
        return tabulate(rows, headers=['metric', 'precision', 'recall', 'f1'], tablefmt='github')

    def summary(self) -> Dict:
        return {
            'samples': self.count,
            **{f"{variant}_{part}": getattr(score, part) for variant, score in self.means.items()
               for part in ('precision', 'recall', 'f1')},
        }

    def to_parquet(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        self.per_sample.to_parquet(path, engine='pyarrow', index=False)
        return path


def tokenize_for_rouge(text: str, tokenization: Tokenization = 'default') -> List[str]:
    """'default': lowercase alphanumeric runs; 'whitespace': str.split; or any callable"""
    if callable(tokenization):
        return list(tokenization(text))
    if tokenization in (None, 'default'):
        return _ALNUM_RE.findall(text.lower())
    if tokenization == 'whitespace':
        return text.split()
    raise ValueError(f"unknown tokenization {tokenization!r}")


def ngram_counts(words: Sequence[str], n: int) -> Counter:
    return Counter(tuple(words[i:i + n]) for i in range(len(words) - n + 1))


def rouge_n(ref: Sequence[str], gen: Sequence[str], n: int) -> RougeScore:
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    ref_counts, gen_counts = ngram_counts(ref, n), ngram_counts(gen, n)
    overlap = sum((ref_counts & gen_counts).values())
    return RougeScore.from_counts(overlap, sum(gen_counts.values()), sum(ref_counts.values()))


def lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    previous = [0] * (len(b) + 1)
    for x in a:
        current = [0]
        for j, y in enumerate(b, start=1):
            current.append(previous[j - 1] + 1 if x == y else max(previous[j], current[j - 1]))
        previous = current
    return previous[-1]


def rouge_l(ref: Sequence[str], gen: Sequence[str]) -> RougeScore:
    return RougeScore.from_counts(lcs_length(ref, gen), len(gen), len(ref))


def score_pair(reference: str, generated: str, tokenization: Tokenization = 'default') -> Dict[str, RougeScore]:
    ref = tokenize_for_rouge(reference, tokenization)
    gen = tokenize_for_rouge(generated, tokenization)
    return {'rouge1': rouge_n(ref, gen, 1), 'rouge2': rouge_n(ref, gen, 2), 'rougeL': rouge_l(ref, gen)}


class RougeAccumulator:
    """
    Streaming ROUGE: texts are scored as they arrive and only the per-sample
    score row is kept
    """

    def __init__(self, tokenization: Tokenization = 'default'):
        self.tokenization = tokenization
        self.rows: List[Dict] = []

    def __len__(self) -> int:
        return len(self.rows)

    def add(self, reference: str, generated: str, sample_id: Optional[str] = None) -> Dict[str, RougeScore]:
        scores = score_pair(reference, generated, self.tokenization)
        row = {'id': sample_id if sample_id is not None else str(len(self.rows))}
        for variant, score in scores.items():
            row.update({f"{variant}_precision": score.precision, f"{variant}_recall": score.recall,
                        f"{variant}_f1": score.f1})
        self.rows.append(row)
        return scores

    def report(self) -> RougeReport:
        """
        Raises:
            DataError: nothing was added
        """
        if not self.rows:
            raise DataError("no summary pairs to evaluate")
        frame = pd.DataFrame(self.rows)
        means = {variant: RougeScore(precision=float(frame[f"{variant}_precision"].mean()),
                                     recall=float(frame[f"{variant}_recall"].mean()),
                                     f1=float(frame[f"{variant}_f1"].mean()))
                 for variant in VARIANTS}
        logger.info(f"   📊 ROUGE over {len(frame)} pairs: R1 {means['rouge1'].f1:.4f} | "
                    f"R2 {means['rouge2'].f1:.4f} | RL {means['rougeL'].f1:.4f}")
        return RougeReport(per_sample=frame, means=means, count=len(frame))


def evaluate_stream(pairs: Iterable[Tuple[Optional[str], str, str]],
                    tokenization: Tokenization = 'default') -> RougeReport:
    """ROUGE over (id, reference, generated) triples consumed one at a time"""
    accumulator = RougeAccumulator(tokenization)
    for sample_id, reference, candidate in pairs:
        accumulator.add(reference, candidate, sample_id)
    return accumulator.report()


def evaluate_corpus(references: Sequence[str], generated: Sequence[str], tokenization: Tokenization = 'default',
                    ids: Optional[Sequence[str]] = None) -> RougeReport:
    """
    Per-sample and mean ROUGE over aligned reference / generated summaries

    Raises:
        DataError: inputs of different lengths, or no pairs
    """
    if len(references) != len(generated):
        raise DataError(f"{len(references)} references but {len(generated)} generated summaries")
    ids = list(ids) if ids is not None else [str(i) for i in range(len(references))]
    return evaluate_stream(zip(ids, references, generated), tokenization)
