"""
Human evaluation analysis

Responses score each summary 1-4 on three criteria. Scores are mapped to
0-100, the fastest workers can be dropped by a response-time percentile,
and systems are compared with one-tailed Welch t-tests.
"""

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import stats

from semsim.errors import DataError, StatisticsError

logger = logging.getLogger(__name__)

CRITERIA = ('creativity', 'readability', 'relevance')
SYSTEMS = ('reference', 'baseline', 'ours')
COLUMNS = ('worker', 'team', 'time_sec', 'system') + CRITERIA
SWEEP_PERCENTS = tuple(range(0, 45, 5))
SCORE_MIN, SCORE_MAX = 1, 4


@dataclass
class ResponseRecord:
    worker: str
    team: str
    time_sec: float
    system: str
    creativity: int
    readability: int
    relevance: int

    def __post_init__(self):
        if self.time_sec <= 0:
            raise DataError(f"worker {self.worker}: response time must be > 0, got {self.time_sec}")
        for criterion in CRITERIA:
            value = getattr(self, criterion)
            if int(value) != value or not SCORE_MIN <= value <= SCORE_MAX:
                raise DataError(f"worker {self.worker}: {criterion} score {value} outside 1..4")


@dataclass
class TTestResult:
    t: float
    df: float
    p_value: float


@dataclass
class AggregateReport:
    """Per-system means on the 0-100 scale plus significance tests"""
    means: pd.DataFrame
    retained_responses: int
    retained_workers: int
    p_values: pd.DataFrame = field(default_factory=pd.DataFrame)
    truncate_pct: float = 0.0
    removed_by_team: Dict[str, int] = field(default_factory=dict)

    def total(self, system: str) -> float:
        return float(self.means.loc[system, 'total'])


# ---------------------------------------------------------------------------
# Records

def validate_frame(frame: pd.DataFrame) -> pd.DataFrame:
    missing = [c for c in COLUMNS if c not in frame.columns]
    if missing:
        raise DataError(f"response table is missing columns: {missing}")
    frame = frame.loc[:, list(COLUMNS)].copy()
    frame['worker'] = frame['worker'].astype(str)
    frame['team'] = frame['team'].astype(str)
    frame['time_sec'] = frame['time_sec'].astype(float)
    if (frame['time_sec'] <= 0).any():
        bad = frame.index[frame['time_sec'] <= 0][0]
        raise DataError(f"response time must be > 0 (row {bad})")
    for criterion in CRITERIA:
        values = frame[criterion]
        if not np.all(np.equal(np.mod(values, 1), 0)) or values.min() < SCORE_MIN or values.max() > SCORE_MAX:
            raise DataError(f"{criterion} scores must be integers in 1..4")
        frame[criterion] = values.astype(int)
    return frame


def records_to_frame(records: Iterable[ResponseRecord]) -> pd.DataFrame:
    return validate_frame(pd.DataFrame([r.__dict__ for r in records], columns=list(COLUMNS)))


def load_responses(path) -> pd.DataFrame:
    """Read the response CSV (header worker,team,time_sec,system,creativity,readability,relevance)"""
    path = Path(path)
    if not path.exists():
        raise DataError(f"response file not found: {path}")
    frame = validate_frame(pd.read_csv(path))
    logger.info(f"   📥 Loaded {len(frame)} responses from {frame['worker'].nunique()} workers")
    return frame


# ---------------------------------------------------------------------------
# Operations

def rescale(score) -> float:
    """(score - 1) / 3 * 100"""
    if int(score) != score or not SCORE_MIN <= score <= SCORE_MAX:
        raise DataError(f"score {score} outside 1..4")
    return (score - SCORE_MIN) / (SCORE_MAX - SCORE_MIN) * 100.0


def rescaled(frame: pd.DataFrame) -> pd.DataFrame:
    out = frame.copy()
    for criterion in CRITERIA:
        out[criterion] = (out[criterion] - SCORE_MIN) / (SCORE_MAX - SCORE_MIN) * 100.0
    out['total'] = out[list(CRITERIA)].mean(axis=1)
    return out


def worker_times(frame: pd.DataFrame) -> pd.Series:
    return frame.groupby('worker')['time_sec'].sum()


def time_threshold(times: Sequence[float], p: float) -> float:
    """Worker time at sorted index ceil(p * N / 100), clamped to the last worker"""
    ordered = np.sort(np.asarray(times, dtype=float))
    rank = math.ceil(round(p * len(ordered) / 100.0, 9))
    return float(ordered[min(rank, len(ordered) - 1)])


def truncate_by_time(frame: pd.DataFrame, p: float) -> pd.DataFrame:
    """
    Drop whole workers whose total response time falls strictly below the
    p-th percentile of worker times; workers tied at the threshold stay
    """
    if not 0 <= p <= 100:
        raise DataError(f"truncation percent must be in [0, 100], got {p}")
    if p == 0 or frame.empty:
        return frame.copy()
    times = worker_times(frame)
    threshold = time_threshold(times.values, p)
    keep = set(times.index[times >= threshold])
    return frame[frame['worker'].isin(keep)].copy()


def removed_workers_by_team(frame: pd.DataFrame, truncated: pd.DataFrame) -> Dict[str, int]:
    removed = frame[~frame['worker'].isin(set(truncated['worker']))]
    return {str(team): int(count) for team, count in removed.groupby('team')['worker'].nunique().items()}


def welch_t_test(sample_a: Sequence[float], sample_b: Sequence[float]) -> TTestResult:
    """
    Welch's unequal-variance t-test, upper tail (mean(a) > mean(b))

    Raises:
        StatisticsError: a sample has fewer than two values or both have zero variance
    """
    a, b = np.asarray(sample_a, dtype=float), np.asarray(sample_b, dtype=float)
    if len(a) < 2 or len(b) < 2:
        raise StatisticsError(f"t-test needs at least two values per sample, got {len(a)} and {len(b)}")
    var_a, var_b = a.var(ddof=1) / len(a), b.var(ddof=1) / len(b)
    if var_a + var_b == 0:
        raise StatisticsError("t-test undefined: both samples have zero variance")
    result = stats.ttest_ind(a, b, equal_var=False, alternative='greater')
    df = (var_a + var_b) ** 2 / (var_a ** 2 / (len(a) - 1) + var_b ** 2 / (len(b) - 1))
    return TTestResult(t=float(result.statistic), df=float(df), p_value=float(result.pvalue))


def one_tailed_t_test(sample_a: Sequence[float], sample_b: Sequence[float]) -> float:
    return welch_t_test(sample_a, sample_b).p_value


def _pair_tests(scores: pd.DataFrame, pairs: Sequence[Tuple[str, str]]) -> pd.DataFrame:
    rows = []
    for system_a, system_b in pairs:
        for criterion in CRITERIA + ('total',):
            a = scores.loc[scores['system'] == system_a, criterion]
            b = scores.loc[scores['system'] == system_b, criterion]
            try:
                result = welch_t_test(a, b)
                rows.append({'pair': f"{system_a}>{system_b}", 'criterion': criterion,
                             't': result.t, 'df': result.df, 'p_value': result.p_value})
            except StatisticsError as e:
                logger.warning(f"   ⚠️ {system_a} vs {system_b} on {criterion}: {e}")
                rows.append({'pair': f"{system_a}>{system_b}", 'criterion': criterion,
                             't': np.nan, 'df': np.nan, 'p_value': np.nan})
    return pd.DataFrame(rows, columns=['pair', 'criterion', 't', 'df', 'p_value'])


def aggregate(frame: pd.DataFrame, pairs: Sequence[Tuple[str, str]] = ()) -> AggregateReport:
    """
    Per-system, per-criterion means of the rescaled scores; total is the
    mean of the three criterion means

    Raises:
        DataError: no responses
    """
    if frame.empty:
        raise DataError("no responses to aggregate")
    scores = rescaled(frame)
    means = scores.groupby('system')[list(CRITERIA)].mean()
    means['total'] = means[list(CRITERIA)].mean(axis=1)
    means['responses'] = scores.groupby('system').size()
    return AggregateReport(
        means=means,
        retained_responses=len(frame),
        retained_workers=int(frame['worker'].nunique()),
        p_values=_pair_tests(scores, pairs),
    )


def truncation_sweep(frame: pd.DataFrame, p_list: Sequence[float] = SWEEP_PERCENTS,
                     pairs: Sequence[Tuple[str, str]] = ()) -> List[AggregateReport]:
    reports = []
    for p in p_list:
        truncated = truncate_by_time(frame, p)
        report = aggregate(truncated, pairs)
        report.truncate_pct = p
        report.removed_by_team = removed_workers_by_team(frame, truncated)
        reports.append(report)
    return reports


def sweep_table(reports: Sequence[AggregateReport]) -> pd.DataFrame:
    """One row per truncation percent: retained counts, per-system totals and p-values"""
    rows = []
    for report in reports:
        row = {'truncate_pct': report.truncate_pct, 'responses': report.retained_responses,
               'workers': report.retained_workers, 'removed_workers': sum(report.removed_by_team.values())}
        for system in report.means.index:
            row[f"{system}_total"] = float(report.means.loc[system, 'total'])
        for _, test in report.p_values[report.p_values['criterion'] == 'total'].iterrows():
            row[f"p[{test['pair']}]"] = test['p_value']
        rows.append(row)
    return pd.DataFrame(rows)


def parse_pairs(text: Optional[str]) -> List[Tuple[str, str]]:
    """'ours:baseline,ours:reference' -> [('ours', 'baseline'), ('ours', 'reference')]"""
    if not text:
        return []
    pairs = []
    for item in text.split(','):
        left, sep, right = item.strip().partition(':')
        if not sep or not left or not right:
            raise DataError(f"bad system pair {item!r}; expected a:b")
        pairs.append((left, right))
    return pairs
