import numpy as np
import pandas as pd
import pytest
from scipy import stats

from local_analytics.evalstats import (SWEEP_PERCENTS, ResponseRecord, aggregate, load_responses, parse_pairs,
                                       records_to_frame, removed_workers_by_team, rescale, rescaled,
                                       sweep_table, time_threshold, truncate_by_time, truncation_sweep,
                                       one_tailed_t_test, welch_t_test, worker_times)
from local_analytics.plots import plot_sweep
from scripts.make_responses import make_responses
from semsim.errors import DataError, StatisticsError
from tests.conftest import RESPONSES_PATH


def twenty_workers():
    """Worker i answers once, taking i seconds"""
    return records_to_frame(ResponseRecord(worker=f"w{i:02d}", team=f"team-{i % 4}", time_sec=float(i),
                                           system='ours', creativity=1 + i % 4, readability=2, relevance=3)
                            for i in range(1, 21))


def test_threshold_and_truncation():
    frame = twenty_workers()
    assert time_threshold(range(1, 21), 5) == 2.0
    assert list(truncate_by_time(frame, 5)['worker']) == [f"w{i:02d}" for i in range(2, 21)]
    assert list(truncate_by_time(frame, 100)['worker']) == ['w20']
    assert truncate_by_time(frame, 0).equals(frame)


def test_truncation_keeps_ties():
    frame = records_to_frame(ResponseRecord(worker=f"w{i}", team='t', time_sec=t, system='ours', creativity=2,
                                            readability=2, relevance=2)
                             for i, t in enumerate([3.0, 5.0, 5.0, 9.0]))
    assert len(truncate_by_time(frame, 50)) == 3


def test_truncation_sums_worker_time():
    frame = records_to_frame([
        ResponseRecord('slow', 't', 10.0, 'ours', 2, 2, 2), ResponseRecord('slow', 't', 10.0, 'baseline', 2, 2, 2),
        ResponseRecord('fast', 't', 15.0, 'ours', 2, 2, 2),
    ])
    assert set(truncate_by_time(frame, 50)['worker']) == {'slow'}


def test_truncation_percent_range():
    with pytest.raises(DataError):
        truncate_by_time(twenty_workers(), 101)
    with pytest.raises(DataError):
        truncate_by_time(twenty_workers(), -1)


def test_rescale():
    assert rescale(1) == 0.0
    assert rescale(4) == 100.0
    assert rescale(3) == pytest.approx(66.667, abs=1e-3)
    for bad in (0, 5, 2.5):
        with pytest.raises(DataError):
            rescale(bad)


def test_aggregate_single_response():
    frame = records_to_frame([ResponseRecord('w1', 't', 12.0, 'ours', 2, 3, 4)])
    means = aggregate(frame).means
    assert means.loc['ours', 'creativity'] == pytest.approx(33.333, abs=1e-3)
    assert means.loc['ours', 'readability'] == pytest.approx(66.667, abs=1e-3)
    assert means.loc['ours', 'relevance'] == 100.0
    assert means.loc['ours', 'total'] == pytest.approx(66.667, abs=1e-3)
    assert means.loc['ours', 'responses'] == 1


def test_aggregate_empty():
    empty = twenty_workers().iloc[0:0]
    with pytest.raises(DataError):
        aggregate(empty)


def test_welch_hand_example():
    result = welch_t_test([1, 2, 3, 4, 5], [0, 1, 2, 3, 4])
    assert result.t == pytest.approx(1.0)
    assert result.df == pytest.approx(8.0)
    assert result.p_value == pytest.approx(stats.t.sf(1.0, 8), abs=1e-9)
    assert result.p_value == pytest.approx(0.1733, abs=1e-3)
    assert one_tailed_t_test([1, 2, 3, 4, 5], [0, 1, 2, 3, 4]) == result.p_value


def test_welch_antisymmetry(rng):
    a, b = rng.normal(1.0, 1.0, size=12), rng.normal(0.5, 2.0, size=9)
    forward, backward = welch_t_test(a, b), welch_t_test(b, a)
    assert forward.t == pytest.approx(-backward.t)
    assert forward.p_value + backward.p_value == pytest.approx(1.0)


def test_welch_identical_samples():
    result = welch_t_test([1.0, 2.0, 3.0], [1.0, 2.0, 3.0])
    assert result.t == 0.0 and result.p_value == pytest.approx(0.5)


@pytest.mark.parametrize('a, b', [([1.0], [1.0, 2.0]), ([2.0, 2.0], [3.0, 3.0])])
def test_welch_degenerate_samples(a, b):
    with pytest.raises(StatisticsError):
        welch_t_test(a, b)


def test_bundled_responses_sweep():
    frame = load_responses(RESPONSES_PATH)
    assert frame['worker'].nunique() == 20
    table = sweep_table(truncation_sweep(frame, pairs=[('ours', 'baseline')]))
    assert list(table['truncate_pct']) == list(SWEEP_PERCENTS)
    assert len(table) == 9
    assert table['responses'].is_monotonic_decreasing
    assert table['workers'].is_monotonic_decreasing
    assert table.loc[0, 'removed_workers'] == 0
    assert {'ours_total', 'baseline_total', 'reference_total', 'p[ours>baseline]'} <= set(table.columns)


def test_duplicated_responses_keep_means():
    frame = load_responses(RESPONSES_PATH)
    doubled = pd.concat([frame, frame], ignore_index=True)
    for p in (0, 20, 40):
        single, double = aggregate(truncate_by_time(frame, p)), aggregate(truncate_by_time(doubled, p))
        assert np.allclose(single.means['total'], double.means['total'])
        assert single.retained_workers == double.retained_workers


def test_removed_workers_by_team():
    frame = twenty_workers()
    removed = removed_workers_by_team(frame, truncate_by_time(frame, 20))
    assert sum(removed.values()) == 4
    assert set(removed) <= {f"team-{k}" for k in range(4)}


def test_pair_tests_reported():
    frame = load_responses(RESPONSES_PATH)
    tests = aggregate(frame, [('ours', 'baseline')]).p_values
    assert set(tests['criterion']) == {'creativity', 'readability', 'relevance', 'total'}
    assert tests['p_value'].between(0.0, 1.0).all()


def test_rescaled_total_column():
    out = rescaled(records_to_frame([ResponseRecord('w', 't', 1.0, 'ours', 1, 4, 4)]))
    assert out.loc[0, 'total'] == pytest.approx(200 / 3)


@pytest.mark.parametrize('text', [
    'worker,team,time_sec,system,creativity,readability\nw1,t,3,ours,2,2\n',
    'worker,team,time_sec,system,creativity,readability,relevance\nw1,t,3,ours,5,2,2\n',
    'worker,team,time_sec,system,creativity,readability,relevance\nw1,t,0,ours,2,2,2\n',
])
def test_bad_response_files(tmp_path, text):
    path = tmp_path / 'responses.csv'
    path.write_text(text)
    with pytest.raises(DataError):
        load_responses(path)


def test_response_record_validation():
    with pytest.raises(DataError):
        ResponseRecord('w', 't', 0.0, 'ours', 2, 2, 2)
    with pytest.raises(DataError):
        ResponseRecord('w', 't', 3.0, 'ours', 2, 7, 2)


def test_parse_pairs():
    assert parse_pairs('ours:baseline, ours:reference') == [('ours', 'baseline'), ('ours', 'reference')]
    assert parse_pairs(None) == []
    with pytest.raises(DataError):
        parse_pairs('ours-baseline')


def test_synthetic_responses_truncation_drops_fast_workers():
    frame = make_responses(workers=40, fast_share=0.25, seed=3)
    assert set(frame['system']) == {'reference', 'baseline', 'ours'}
    times = worker_times(frame)
    fast = set(times.index[times < 30])
    kept = set(truncate_by_time(frame, 100 * len(fast) / len(times))['worker'])
    assert fast and not fast & kept
    assert make_responses(workers=40, fast_share=0.25, seed=3).equals(frame)


def test_sweep_figure(tmp_path):
    table = sweep_table(truncation_sweep(load_responses(RESPONSES_PATH)))
    path = plot_sweep(table, tmp_path / 'figures' / 'sweep.png')
    assert path.exists() and path.stat().st_size > 0
