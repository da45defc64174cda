"""Uncertainty-aware adaptive listwise reranking.

Each iteration selects the documents whose top-k membership is still in
doubt, sorts them by estimated relevance, cuts them into disjoint batches no
larger than the reranker capacity, reranks every batch and folds the
outcomes back into the TrueSkill beliefs.  The loop ends when few uncertain
documents remain, when the top-k stops changing, or when the call budget
runs out.  Documents are finally ordered by their posterior mean.
"""

from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from enum import Enum
from typing import Mapping, Optional, Sequence

import numpy as np

from .backends import DEFAULT_CAPACITY, Passage, RerankRequest, RerankResult
from .belief import BeliefState, select_uncertain, topk_probabilities
from .exceptions import ConfigurationError, DomainError, RerankerError, TransportError
from .ratings import (
    DEFAULT_BETA,
    DEFAULT_DRAW_PROBABILITY,
    DEFAULT_MU,
    DEFAULT_SIGMA,
    Environment,
    Rating,
    rate,
    transform_outcome,
)
from .seeding import derive_rng

__all__ = [
    "StopRule",
    "PartitionRule",
    "InitRule",
    "SchedulerConfig",
    "QueryTask",
    "RunTrace",
    "initialize_beliefs",
    "partition",
    "budget_schedule",
    "apply_updates",
    "call_batches",
    "final_order",
    "run_acurank",
]

logger = logging.getLogger(__name__)

# Shift applied so that the smallest retrieval score becomes this value.
MIN_SHIFTED_SCORE = 0.1


class StopRule(str, Enum):
    UNCERTAIN_COUNT = "uncertain_count"
    TOPK_STABILITY = "topk_stability"
    BUDGET_ONLY = "budget_only"


class PartitionRule(str, Enum):
    SEQUENTIAL = "sequential"
    RANDOM = "random"


class InitRule(str, Enum):
    RETRIEVAL_SCORES = "retrieval_scores"
    DEFAULT_TRUESKILL = "default_trueskill"


VARIANTS = {
    "default": {},
    "h": {"epsilon": 1e-4},
    "hh": {"epsilon": 1e-4, "tau": 5},
}


@dataclass(frozen=True)
class SchedulerConfig:
    k: int = 10
    m: int = DEFAULT_CAPACITY
    epsilon: float = 0.01
    tau: int = 10
    max_calls: Optional[int] = None
    max_iterations: int = 100
    stop_rule: StopRule = StopRule.UNCERTAIN_COUNT
    stability_window: int = 2
    partition_rule: PartitionRule = PartitionRule.SEQUENTIAL
    init_rule: InitRule = InitRule.RETRIEVAL_SCORES
    seed: int = 0
    draw_probability: float = DEFAULT_DRAW_PROBABILITY

    def __post_init__(self):
        try:
            object.__setattr__(self, "stop_rule", StopRule(self.stop_rule))
            object.__setattr__(self, "partition_rule", PartitionRule(self.partition_rule))
            object.__setattr__(self, "init_rule", InitRule(self.init_rule))
        except ValueError as exc:
            raise ConfigurationError(str(exc)) from exc
        if not 0.0 < self.epsilon < 0.5:
            raise ConfigurationError(f"epsilon must lie in (0, 0.5), got {self.epsilon}")
        if self.tau < 1:
            raise ConfigurationError(f"tau must be >= 1, got {self.tau}")
        if self.m < 2:
            raise ConfigurationError(f"m must be >= 2, got {self.m}")
        if self.k < 1:
            raise ConfigurationError(f"k must be >= 1, got {self.k}")
        if self.max_calls is not None and self.max_calls < 0:
            raise ConfigurationError(f"max_calls must be >= 0, got {self.max_calls}")
        if self.max_iterations < 1:
            raise ConfigurationError(f"max_iterations must be >= 1, got {self.max_iterations}")
        if self.stability_window < 1:
            raise ConfigurationError(f"stability_window must be >= 1, got {self.stability_window}")

    def with_variant(self, variant: str) -> "SchedulerConfig":
        """Apply a named preset: ``default``, ``h`` (eps=1e-4) or ``hh`` (also tau=5)."""
        try:
            overrides = VARIANTS[variant.lower()]
        except KeyError:
            raise ConfigurationError(f"unknown variant {variant!r}; expected one of {sorted(VARIANTS)}") from None
        return replace(self, **overrides)

    @classmethod
    def from_mapping(cls, values: Mapping) -> "SchedulerConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(values) - known
        if unknown:
            raise ConfigurationError(f"unknown scheduler settings: {sorted(unknown)}")
        return cls(**values)

    def to_dict(self) -> dict:
        out = asdict(self)
        for key, value in out.items():
            if isinstance(value, Enum):
                out[key] = value.value
        return out


@dataclass(frozen=True)
class QueryTask:
    """One query with its first-stage candidates, best first.

    ``candidates`` holds ``(doc_id, retrieval_score)`` pairs in descending
    score order; list position doubles as the retrieval rank used for
    tie-breaking.
    """

    query_id: str
    query: str
    candidates: tuple
    passages: Mapping[str, Passage] = field(default_factory=dict)

    def __post_init__(self):
        candidates = tuple((str(doc_id), float(score)) for doc_id, score in self.candidates)
        object.__setattr__(self, "candidates", candidates)
        ids = [doc_id for doc_id, _ in candidates]
        if len(set(ids)) != len(ids):
            raise DomainError(f"query {self.query_id}: duplicate candidate ids")
        scores = [score for _, score in candidates]
        if not all(math.isfinite(s) for s in scores):
            raise DomainError(f"query {self.query_id}: retrieval scores must be finite")
        if any(a < b for a, b in zip(scores, scores[1:])):
            raise DomainError(f"query {self.query_id}: candidates must be sorted by descending score")

    @property
    def doc_ids(self) -> list[str]:
        return [doc_id for doc_id, _ in self.candidates]

    @property
    def scores(self) -> list[float]:
        return [score for _, score in self.candidates]

    def __len__(self):
        return len(self.candidates)

    def passage(self, doc_id: str) -> Passage:
        return self.passages.get(doc_id) or Passage(doc_id=doc_id, text="")

    def request(self, doc_ids: Sequence[str], capacity: int = DEFAULT_CAPACITY) -> RerankRequest:
        return RerankRequest(self.query, tuple(self.passage(d) for d in doc_ids), capacity=capacity)


@dataclass
class RunTrace:
    """Per-query record of what a reranking strategy did.

    ``per_iteration`` holds one dict per loop pass with ``selected_count``,
    ``batch_sizes``, ``threshold`` and ``failures``; the pass that ended the
    loop also carries ``stop_reason`` (and makes no calls if the stop was
    decided before reranking).
    """

    query_id: str
    strategy: str
    calls_made: int = 0
    iterations: int = 0
    per_iteration: list = field(default_factory=list)
    final_ranking: list = field(default_factory=list)
    stop_reason: Optional[str] = None
    failures: int = 0
    dataset: Optional[str] = None
    ndcg: Optional[float] = None
    wig: Optional[float] = None
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, data: Mapping) -> "RunTrace":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in data.items() if k in known})


def initialize_beliefs(task: QueryTask, cfg: SchedulerConfig, env: Environment | None = None) -> BeliefState:
    """Build prior beliefs for every candidate.

    With score-based initialization the mean is the retrieval score (shifted
    so the minimum becomes 0.1 whenever any score is non-positive) and the
    standard deviation is a third of it.  Unless ``env`` is given, ``beta``
    is half the mean prior standard deviation.
    """
    n = len(task)
    if n == 0:
        raise DomainError(f"query {task.query_id}: no candidates")
    if cfg.init_rule is InitRule.DEFAULT_TRUESKILL:
        mu = np.full(n, DEFAULT_MU)
        sigma = np.full(n, DEFAULT_SIGMA)
        beta = DEFAULT_BETA
    else:
        mu = np.asarray(task.scores, dtype=float)
        low = mu.min()
        if low <= 0:
            mu = mu + (MIN_SHIFTED_SCORE - low)
        sigma = mu / 3.0
        beta = float(sigma.mean()) / 2.0
    if env is None:
        env = Environment(beta=beta, draw_probability=cfg.draw_probability)
    return BeliefState.from_arrays(mu, sigma, env, min(cfg.k, n), doc_ids=task.doc_ids)


def _sort_key(state: BeliefState):
    mu, sigma = state.mu, state.sigma
    return lambda i: (-mu[i], sigma[i], i)


def partition(
    candidates,
    state: BeliefState,
    cfg: SchedulerConfig,
    rng: np.random.Generator | None = None,
) -> list[list[int]]:
    """Cut the uncertain set into disjoint batches of at most ``cfg.m``.

    Sequential mode sorts by mean descending (then sigma ascending, then
    retrieval rank, i.e. index in ``state``) and slices contiguously.
    Random mode shuffles with ``rng`` before slicing.
    """
    ordered = sorted(candidates, key=_sort_key(state))
    if cfg.partition_rule is PartitionRule.RANDOM:
        if rng is None:
            rng = np.random.default_rng(cfg.seed)
        ordered = [ordered[i] for i in rng.permutation(len(ordered))]
    return [ordered[start:start + cfg.m] for start in range(0, len(ordered), cfg.m)]


def budget_schedule(batches: Sequence[Sequence[int]], remaining_budget: int, state: BeliefState) -> list:
    """Keep the ``remaining_budget`` batches with the highest mean mu."""
    if remaining_budget < 0:
        raise ConfigurationError(f"remaining budget must be >= 0, got {remaining_budget}")
    mu = state.mu
    ranked = sorted(range(len(batches)), key=lambda b: -float(np.mean(mu[list(batches[b])])))
    return [batches[b] for b in ranked[:remaining_budget]]


def call_batches(backend, task: QueryTask, batches, capacity: int, max_workers: int = 1) -> list:
    """Rerank each batch of doc ids; failures come back as exception objects.

    Fatal transport errors (non-retryable HTTP statuses) are re-raised once
    every batch has returned.
    """

    def one(batch):
        try:
            return backend(task.request(batch, capacity))
        except RerankerError as exc:
            logger.warning("query %s: reranker call failed: %s", task.query_id, exc)
            return exc

    if max_workers > 1 and len(batches) > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            results = list(pool.map(one, batches))
    else:
        results = [one(batch) for batch in batches]
    for result in results:
        if isinstance(result, TransportError) and not result.retryable:
            raise result
    return results


def apply_updates(ratings: list, doc_ids: Sequence[str], batches, results, env: Environment) -> list:
    """Fold reranker outcomes into a copy of ``ratings``.

    ``batches`` hold indices into ``doc_ids``; failed results (exceptions)
    leave their batch unchanged.  Batches are disjoint, so the application
    order does not matter.
    """
    ratings = list(ratings)
    for batch, result in zip(batches, results):
        if not isinstance(result, RerankResult):
            continue
        ids = [doc_ids[i] for i in batch]
        outcome = transform_outcome(ids, result, [ratings[i] for i in batch])
        for i, posterior in zip(batch, rate(outcome, env)):
            ratings[i] = posterior
    return ratings


def final_order(state: BeliefState) -> list[str]:
    """Doc ids by mean descending, then sigma ascending, then retrieval rank."""
    return [state.doc_ids[i] for i in sorted(range(len(state)), key=_sort_key(state))]


def _topk(state: BeliefState, k: int) -> tuple:
    return tuple(final_order(state)[:k])


def run_acurank(
    task: QueryTask,
    cfg: SchedulerConfig,
    backend,
    env: Environment | None = None,
    max_workers: int = 1,
    strategy: str = "acurank",
) -> tuple[list[str], RunTrace]:
    """Rerank one query adaptively; returns ``(ranking, trace)``."""
    state = initialize_beliefs(task, cfg, env)
    env = state.env
    doc_ids, k = state.doc_ids, state.k
    ratings = list(state.ratings)
    trace = RunTrace(query_id=task.query_id, strategy=strategy)
    rng = derive_rng(cfg.seed, task.query_id, "partition")
    previous_topk = _topk(state, k)
    stable = 0

    def stop(reason, record=None):
        if record is None:
            record = {"selected_count": 0, "batch_sizes": [], "threshold": None, "failures": 0}
            trace.per_iteration.append(record)
        record["stop_reason"] = reason
        trace.stop_reason = reason

    while True:
        if len(task) < 2:
            stop("too_few_documents")
            break
        if trace.iterations >= cfg.max_iterations:
            stop("max_iterations")
            break
        if cfg.max_calls is not None and trace.calls_made >= cfg.max_calls:
            stop("budget")
            break
        state = BeliefState(doc_ids, ratings, env, k)
        probs = topk_probabilities(state)
        selected = select_uncertain(probs, cfg.epsilon)
        record = {
            "selected_count": len(selected),
            "batch_sizes": [],
            "threshold": probs.threshold,
            "failures": 0,
        }
        trace.per_iteration.append(record)
        if trace.iterations > 0 and cfg.stop_rule is StopRule.UNCERTAIN_COUNT and len(selected) < cfg.tau:
            stop("uncertain_count", record)
            break
        batches = [b for b in partition(selected, state, cfg, rng) if len(b) >= 2]
        if not batches:
            stop("no_uncertain", record)
            break
        if cfg.max_calls is not None:
            remaining = cfg.max_calls - trace.calls_made
            if len(batches) > remaining:
                batches = budget_schedule(batches, remaining, state)
        results = call_batches(backend, task, [[doc_ids[i] for i in b] for b in batches], cfg.m, max_workers)
        ratings = apply_updates(ratings, doc_ids, batches, results, env)
        failures = sum(not isinstance(r, RerankResult) for r in results)
        record["batch_sizes"] = [len(b) for b in batches]
        record["failures"] = failures
        trace.calls_made += len(batches)
        trace.failures += failures
        trace.iterations += 1

        if cfg.stop_rule is StopRule.TOPK_STABILITY:
            current = _topk(BeliefState(doc_ids, ratings, env, k), k)
            stable = stable + 1 if current == previous_topk else 0
            previous_topk = current
            if stable >= cfg.stability_window:
                stop("topk_stability", record)
                break

    state = BeliefState(doc_ids, ratings, env, k)
    trace.final_ranking = final_order(state)
    return trace.final_ranking, trace
