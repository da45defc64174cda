"""Seeded synthetic comparisons of reranking methods.

Each query of a :class:`~acurank.data.SyntheticSpec` dataset is reranked by
a simulated backend: the oracle, or a Plackett-Luce reranker whose
temperature is the query's own noise level.  Per-query NDCG@10, call counts,
temperature and WIG are collected so that call cost can be related to query
difficulty afterwards.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .backends import NoisyReranker, OracleReranker
from .data import SyntheticDataset
from .engine import MIN_SHIFTED_SCORE, QueryTask, RunTrace
from .metrics import ndcg_at_k, spearman, wig
from .methods import MethodSpec, run_queries

__all__ = [
    "QueryResult",
    "SimulationRow",
    "retrieval_wig",
    "simulate_method",
    "summarize",
    "rows_to_csv",
]

WIG_WINDOW = 50


@dataclass(frozen=True)
class QueryResult:
    query_id: str
    ndcg: float
    calls: int
    temperature: float
    wig: Optional[float]
    trace: RunTrace


@dataclass(frozen=True)
class SimulationRow:
    method: str
    budget: Optional[int]
    mean_ndcg: float
    mean_calls: float
    spearman_rho: float
    spearman_p: float

    def as_csv_row(self) -> list:
        return [
            self.method,
            "" if self.budget is None else self.budget,
            repr(self.mean_ndcg),
            repr(self.mean_calls),
            repr(self.spearman_rho),
            repr(self.spearman_p),
        ]


CSV_HEADER = ["method", "budget", "mean_ndcg@10", "mean_calls", "spearman_temperature_calls", "spearman_p"]


def retrieval_wig(task: QueryTask, window_k: int = WIG_WINDOW) -> Optional[float]:
    """WIG of the first-stage scores, shifted the same way as belief init.

    Returns ``None`` when the query has fewer than ``window_k`` candidates.
    """
    scores = np.asarray(task.scores, dtype=float)
    if len(scores) < window_k:
        return None
    if scores.min() <= 0:
        scores = scores + (MIN_SHIFTED_SCORE - scores.min())
    return wig(scores, window_k)


def simulate_method(
    method: MethodSpec,
    dataset: SyntheticDataset,
    backend: str = "noisy",
    seed: int = 0,
    jobs: int = 1,
    tasks: Optional[Sequence[QueryTask]] = None,
) -> list[QueryResult]:
    """Run one method over a synthetic dataset and score every query."""
    tasks = tasks if tasks is not None else dataset.tasks()
    if backend == "oracle":
        oracle = OracleReranker()

        def backend_for(query_id):
            return oracle
    else:

        def backend_for(query_id):
            return NoisyReranker(dataset.temperatures[query_id], seed=seed)

    outcome = run_queries(method, tasks, backend_for, jobs=jobs)
    results = []
    for task, trace in zip(tasks, outcome.traces):
        score = ndcg_at_k(trace.final_ranking, dataset.qrels, task.query_id, k=10)
        w = retrieval_wig(task)
        trace.ndcg, trace.wig, trace.dataset = score, w, "synthetic"
        results.append(
            QueryResult(task.query_id, score, trace.calls_made, dataset.temperatures[task.query_id], w, trace)
        )
    return results


def summarize(method: MethodSpec, results: Sequence[QueryResult]) -> SimulationRow:
    calls = [r.calls for r in results]
    temps = [r.temperature for r in results]
    if len(results) >= 4:
        rho, p = spearman(temps, calls)
    else:
        rho, p = float("nan"), float("nan")
    return SimulationRow(
        method=method.label,
        budget=method.budget,
        mean_ndcg=float(np.mean([r.ndcg for r in results])),
        mean_calls=float(np.mean(calls)),
        spearman_rho=float(rho),
        spearman_p=float(p),
    )


def rows_to_csv(rows: Sequence[SimulationRow]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for row in rows:
        writer.writerow(row.as_csv_row())
    return buffer.getvalue()
