"""TrainItems evaluation: candidate generation, ranking and metrics."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Collection, Iterable, Sequence, TextIO

import numpy as np

from .core import InteractionSet
from .crossdomain import TrainingScope
from .recommenders import Recommender

METRICS = ("ndcg", "precision", "recall")
CSV_HEADER = ["city", "strategy", "recommender", "metric", "cutoff", "value", "evaluated_users", "abstained_users"]


@dataclass(frozen=True)
class RankedList:
    user: int
    venues: np.ndarray
    scores: np.ndarray

    def __len__(self):
        return len(self.venues)


def candidate_set(user: int, scope: TrainingScope) -> np.ndarray:
    """Target-city training venues the user has not interacted with in the
    merged training data."""
    universe = scope.target_train.active_venues()
    return np.setdiff1d(universe, scope.merged_train.row(user), assume_unique=True)


def rank(model: Recommender, user: int, candidates, cutoff: int) -> RankedList | None:
    """Top-``cutoff`` candidates by score (ties: ascending venue id); None if
    the model cannot score any candidate."""
    candidates = np.asarray(candidates, dtype=np.int64)
    if len(candidates) == 0:
        return None
    s = np.asarray(model.score(user, candidates), dtype=np.float64)
    ok = ~np.isnan(s)
    if not ok.any():
        return None
    c, s = candidates[ok], s[ok]
    order = np.lexsort((c, -s))[:cutoff]
    return RankedList(user, c[order], s[order])


def _venues(ranking) -> list:
    if isinstance(ranking, RankedList):
        return ranking.venues.tolist()
    if ranking is None:
        return []
    return list(ranking)


def ndcg_at_k(ranking, relevant: Collection, k: int) -> float:
    """Binary-relevance nDCG with log2(pos + 1) discount; ideal DCG over
    min(|relevant|, k) hits."""
    if k < 1:
        raise ValueError("k must be >= 1")
    relevant = set(relevant)
    if not relevant:
        return 0.0
    items = _venues(ranking)[:k]
    dcg = sum(1.0 / math.log2(pos + 2) for pos, v in enumerate(items) if v in relevant)
    idcg = sum(1.0 / math.log2(pos + 2) for pos in range(min(len(relevant), k)))
    return dcg / idcg


def precision_at_k(ranking, relevant: Collection, k: int) -> float:
    relevant = set(relevant)
    return sum(1 for v in _venues(ranking)[:k] if v in relevant) / k


def recall_at_k(ranking, relevant: Collection, k: int) -> float:
    relevant = set(relevant)
    if not relevant:
        return 0.0
    return sum(1 for v in _venues(ranking)[:k] if v in relevant) / len(relevant)


@dataclass(frozen=True)
class EvaluationTask:
    target: int
    scope: TrainingScope
    test: InteractionSet
    cutoff: int = 5

    def __post_init__(self):
        if self.cutoff < 1:
            raise ValueError("cutoff must be >= 1")


@dataclass
class MetricReport:
    """Per-user metric values for the users that received a ranking.

    ``mean`` averages over covered users; ``mean_all`` counts abstaining
    users as zeros.
    """

    cutoff: int
    users: np.ndarray
    values: dict[str, np.ndarray]
    abstained: int
    excluded_test_venues: int = 0
    rankings: dict[int, RankedList] = field(default_factory=dict, repr=False)

    @property
    def evaluated(self) -> int:
        return len(self.users)

    @property
    def coverage(self) -> float:
        total = self.evaluated + self.abstained
        return self.evaluated / total if total else 0.0

    def mean(self, metric: str) -> float:
        v = self.values[metric]
        return float(np.sum(v) / len(v)) if len(v) else 0.0

    def mean_all(self, metric: str) -> float:
        total = self.evaluated + self.abstained
        return float(np.sum(self.values[metric]) / total) if total else 0.0


def evaluate(model: Recommender, task: EvaluationTask, keep_rankings: bool = False) -> MetricReport:
    """Rank the candidate set of every test user of the target city and score it."""
    scope, k = task.scope, task.cutoff
    universe = scope.target_train.active_venues()
    test = task.test
    users_out: list[int] = []
    vals = {m: [] for m in METRICS}
    abstained = 0
    excluded = 0
    rankings = {}
    for u in np.unique(test.users).tolist():
        test_venues = test.row(u)
        cands = candidate_set(u, scope)
        if len(cands) == 0:
            continue
        relevant = set(np.intersect1d(test_venues, cands).tolist())
        excluded += int(len(np.setdiff1d(test_venues, universe)))
        r = rank(model, u, cands, k)
        if r is None:
            abstained += 1
            continue
        users_out.append(u)
        vals["ndcg"].append(ndcg_at_k(r, relevant, k))
        vals["precision"].append(precision_at_k(r, relevant, k))
        vals["recall"].append(recall_at_k(r, relevant, k))
        if keep_rankings:
            rankings[u] = r
    return MetricReport(
        k,
        np.asarray(users_out, dtype=np.int64),
        {m: np.asarray(v, dtype=np.float64) for m, v in vals.items()},
        abstained,
        excluded,
        rankings,
    )


def delta_percent(cd_value: float, sd_value: float) -> float | None:
    """Relative change in percent; None when the single-domain value is not positive."""
    if not sd_value > 0:
        return None
    return 100.0 * (cd_value - sd_value) / sd_value


def report_rows(city: str, strategy: str, recommender: str, report: MetricReport) -> list[list]:
    rows = []
    for m in METRICS:
        rows.append([city, strategy, recommender, m, report.cutoff, repr(report.mean(m)), report.evaluated, report.abstained])
    for m in METRICS:
        rows.append([city, strategy, recommender, f"{m}_all", report.cutoff, repr(report.mean_all(m)),
                     report.evaluated, report.abstained])
    return rows


def write_reports_csv(rows: Iterable[Sequence], fh: TextIO) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in rows:
        w.writerow(r)
