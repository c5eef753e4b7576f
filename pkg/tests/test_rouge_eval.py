from functools import lru_cache

import numpy as np
import pandas as pd
import pytest

from local_analytics.rouge_eval import (VARIANTS, RougeAccumulator, RougeScore, evaluate_corpus, evaluate_stream,
                                        lcs_length, ngram_counts, rouge_l, rouge_n, score_pair, tokenize_for_rouge)
from semsim.errors import DataError


def naive_lcs(a, b):
    @lru_cache(maxsize=None)
    def best(i, j):
        if i == len(a) or j == len(b):
            return 0
        if a[i] == b[j]:
            return 1 + best(i + 1, j + 1)
        return max(best(i + 1, j), best(i, j + 1))

    return best(0, 0)


def test_hand_example():
    scores = score_pair('the cat sat', 'the cat ran')
    assert scores['rouge1'].f1 == pytest.approx(2 / 3)
    assert scores['rouge2'].f1 == pytest.approx(1 / 2)
    assert scores['rougeL'].f1 == pytest.approx(2 / 3)


def test_identical_and_disjoint():
    same = score_pair('a quick brown fox', 'a quick brown fox')
    assert all(s.f1 == 1.0 and s.precision == 1.0 and s.recall == 1.0 for s in same.values())
    disjoint = score_pair('alpha beta', 'gamma delta')
    assert all(s == RougeScore() for s in disjoint.values())


def test_subsequence_precision_and_recall():
    score = rouge_l('a b c d'.split(), 'a c'.split())
    assert (score.precision, score.recall) == (1.0, 0.5)
    assert score.f1 == pytest.approx(2 / 3)


def test_clipped_counts():
    score = rouge_n(['the', 'the'], ['the', 'the', 'the'], 1)
    assert score.precision == pytest.approx(2 / 3) and score.recall == 1.0


def test_short_inputs_score_zero():
    assert rouge_n(['one'], ['one'], 2) == RougeScore()
    assert rouge_l([], ['x']) == RougeScore()
    with pytest.raises(ValueError):
        rouge_n(['a'], ['a'], 0)


def test_f1_is_symmetric(rng):
    words = list('abcdef')
    for _ in range(50):
        a = list(rng.choice(words, size=rng.integers(1, 10)))
        b = list(rng.choice(words, size=rng.integers(1, 10)))
        for n in (1, 2):
            assert rouge_n(a, b, n).f1 == pytest.approx(rouge_n(b, a, n).f1)
        assert rouge_l(a, b).f1 == pytest.approx(rouge_l(b, a).f1)


def test_random_pairs_against_reference_computation(rng):
    words = list('abcde')
    for _ in range(200):
        ref = [str(w) for w in rng.choice(words, size=rng.integers(1, 12))]
        gen = [str(w) for w in rng.choice(words, size=rng.integers(1, 12))]
        assert lcs_length(ref, gen) == naive_lcs(tuple(ref), tuple(gen))
        for n in (1, 2):
            ref_counts, gen_counts = ngram_counts(ref, n), ngram_counts(gen, n)
            overlap = sum(min(c, gen_counts[g]) for g, c in ref_counts.items())
            score = rouge_n(ref, gen, n)
            total = sum(ref_counts.values()) + sum(gen_counts.values())
            expected = 2 * overlap / total if overlap else 0.0
            assert score.f1 == pytest.approx(expected)
            if score.f1:
                p, r = score.precision, score.recall
                assert score.f1 == pytest.approx(2 * p * r / (p + r))
            assert 0.0 <= score.f1 <= 1.0


def test_tokenization_modes():
    assert tokenize_for_rouge('The Cat, sat!') == ['the', 'cat', 'sat']
    assert tokenize_for_rouge('The Cat, sat!', 'whitespace') == ['The', 'Cat,', 'sat!']
    assert tokenize_for_rouge('a-b', lambda text: text.split('-')) == ['a', 'b']
    with pytest.raises(ValueError):
        tokenize_for_rouge('x', 'stemmed')


def test_corpus_means_and_report(tmp_path):
    report = evaluate_corpus(['the cat sat', 'a b'], ['the cat ran', 'a b'], ids=['x', 'y'])
    assert report.count == 2
    assert report.means['rouge1'].f1 == pytest.approx((2 / 3 + 1.0) / 2)
    assert list(report.per_sample['id']) == ['x', 'y']

    summary = report.summary()
    assert summary['samples'] == 2
    assert set(summary) == {'samples'} | {f"{v}_{p}" for v in VARIANTS for p in ('precision', 'recall', 'f1')}
    assert 'rougeL' in report.table()

    path = report.to_parquet(tmp_path / 'scores.parquet')
    reloaded = pd.read_parquet(path)
    assert np.allclose(reloaded['rouge2_f1'], report.per_sample['rouge2_f1'])


def test_corpus_input_errors():
    with pytest.raises(DataError):
        evaluate_corpus(['a', 'b'], ['a'])
    with pytest.raises(DataError):
        evaluate_corpus([], [])


def test_stream_matches_corpus_evaluation(rng):
    words = list('abcdefg')
    refs = [' '.join(rng.choice(words, size=6)) for _ in range(12)]
    gens = [' '.join(rng.choice(words, size=5)) for _ in range(12)]
    corpus = evaluate_corpus(refs, gens)
    streamed = evaluate_stream((str(i), r, g) for i, (r, g) in enumerate(zip(refs, gens)))
    assert streamed.summary() == corpus.summary()
    assert streamed.per_sample.equals(corpus.per_sample)


def test_accumulator_scores_as_pairs_arrive():
    accumulator = RougeAccumulator()
    assert len(accumulator) == 0
    scores = accumulator.add('the cat sat', 'the cat sat', sample_id='a')
    assert scores['rougeL'].f1 == 1.0
    accumulator.add('a b', 'c d')
    assert len(accumulator) == 2
    report = accumulator.report()
    assert list(report.per_sample['id']) == ['a', '1']
    assert report.means['rouge1'].f1 == pytest.approx(0.5)


def test_empty_accumulator_has_no_report():
    with pytest.raises(DataError):
        RougeAccumulator().report()
