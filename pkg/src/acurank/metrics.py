"""Ranking quality, cost aggregation and query-difficulty statistics."""

from __future__ import annotations

import math
from typing import Mapping, Sequence

import numpy as np
from scipy import stats

from .exceptions import EvaluationError

__all__ = ["Qrels", "ndcg_at_k", "macro_average", "wig", "spearman", "report_round"]


class Qrels(dict):
    """Graded judgments: ``qrels[query_id][doc_id] -> grade``."""

    @classmethod
    def from_triples(cls, triples) -> "Qrels":
        out = cls()
        for query_id, doc_id, grade in triples:
            grade = int(grade)
            if grade < 0:
                raise EvaluationError(f"negative grade {grade} for ({query_id}, {doc_id})")
            out.setdefault(str(query_id), {})[str(doc_id)] = grade
        return out


def _dcg(gains: Sequence[float]) -> float:
    return sum(g / math.log2(pos + 2) for pos, g in enumerate(gains))


def ndcg_at_k(ranking: Sequence[str], qrels: Mapping, query_id: str, k: int = 10) -> float:
    """NDCG@k with gain ``2**grade - 1`` and discount ``log2(position + 1)``.

    The ideal ranking is built from every judged document of the query, not
    only the retrieved ones.  Returns 0.0 when the query has no relevant
    judgment.
    """
    if k < 1:
        raise EvaluationError(f"k must be >= 1, got {k}")
    try:
        judged = qrels[query_id]
    except KeyError:
        raise EvaluationError(f"no judgments for query {query_id!r}") from None
    ideal = sorted((2.0 ** g - 1.0 for g in judged.values()), reverse=True)[:k]
    idcg = _dcg(ideal)
    if idcg <= 0:
        return 0.0
    gains = [2.0 ** judged.get(doc_id, 0) - 1.0 for doc_id in ranking[:k]]
    return _dcg(gains) / idcg


def macro_average(per_dataset_means: Mapping[str, float]) -> float:
    """Unweighted mean of per-dataset means; query counts play no role."""
    if not per_dataset_means:
        raise EvaluationError("macro average of an empty mapping")
    return float(sum(per_dataset_means.values()) / len(per_dataset_means))


def report_round(value: float) -> str:
    """Format a reported number with one decimal, rounding half away from zero."""
    scaled = abs(value) * 10.0
    # nudge against binary representation error (55.45 is stored as 55.4499...)
    rounded = math.floor(scaled + 0.5 + 1e-9) / 10.0
    return f"{math.copysign(rounded, value) if rounded else 0.0:.1f}"


def wig(scores_top100: Sequence[float], window_k: int = 50) -> float:
    """Weighted information gain of a retrieval score list.

    Mean of ``log(1 + s)`` over the top ``window_k`` scores minus its mean
    over the whole list.  Larger values indicate a clearer separation at the
    top, i.e. an easier query.
    """
    scores = np.asarray(scores_top100, dtype=float)
    if len(scores) < window_k:
        raise EvaluationError(f"need at least {window_k} scores, got {len(scores)}")
    if window_k < 1:
        raise EvaluationError("window_k must be >= 1")
    if np.any(scores < 0):
        raise EvaluationError("WIG expects non-negative scores")
    logged = np.log1p(np.sort(scores)[::-1])
    return float(logged[:window_k].mean() - logged.mean())


def spearman(xs: Sequence[float], ys: Sequence[float]) -> tuple[float, float]:
    """Spearman rank correlation with average ranks for ties.

    The two-sided p-value uses the t approximation with n - 2 degrees of
    freedom.  A constant input has no defined correlation; rho is reported
    as 0 with p = 1.
    """
    if len(xs) != len(ys):
        raise EvaluationError(f"length mismatch: {len(xs)} vs {len(ys)}")
    n = len(xs)
    if n < 4:
        raise EvaluationError(f"need at least 4 pairs, got {n}")
    rx = stats.rankdata(xs)
    ry = stats.rankdata(ys)
    dx, dy = rx - rx.mean(), ry - ry.mean()
    denom = math.sqrt(float(dx @ dx) * float(dy @ dy))
    if denom == 0:
        return 0.0, 1.0
    rho = float(np.clip((dx @ dy) / denom, -1.0, 1.0))
    if abs(rho) >= 1.0:
        return rho, 0.0
    t = rho * math.sqrt((n - 2) / (1.0 - rho * rho))
    p = float(2.0 * stats.t.sf(abs(t), n - 2))
    return rho, min(max(p, 0.0), 1.0)
