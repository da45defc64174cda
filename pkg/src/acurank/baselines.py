"""Fixed-computation reranking strategies used as comparators.

All three share the backend interface and call accounting of the adaptive
engine, so differences in cost and quality come from the allocation policy
alone.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

from .backends import DEFAULT_CAPACITY, RerankResult
from .belief import BeliefState
from .engine import (
    QueryTask,
    RunTrace,
    SchedulerConfig,
    apply_updates,
    call_batches,
    final_order,
    initialize_beliefs,
)
from .exceptions import ConfigurationError
from .seeding import derive_rng

__all__ = [
    "SlidingWindowConfig",
    "TourRankConfig",
    "StaticStagePlan",
    "sliding_windows",
    "tourrank_stages",
    "run_sliding_window",
    "run_tourrank",
    "run_trueskill_static",
]


@dataclass(frozen=True)
class SlidingWindowConfig:
    window: int = 20
    stride: int = 10
    passes: int = 1

    def __post_init__(self):
        if not 1 <= self.stride <= self.window:
            raise ConfigurationError(f"need 1 <= stride <= window, got stride={self.stride}, window={self.window}")
        if self.window < 2:
            raise ConfigurationError("window must be >= 2")
        if self.passes < 1:
            raise ConfigurationError("passes must be >= 1")


@dataclass(frozen=True)
class TourRankConfig:
    tournaments: int = 1
    stage_plan: tuple = (100, 50, 20, 10, 5, 2)
    # groups per stage; one entry per transition in stage_plan
    groups: tuple = (5, 5, 1, 1, 1)
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "stage_plan", tuple(self.stage_plan))
        object.__setattr__(self, "groups", tuple(self.groups))
        if self.tournaments < 1:
            raise ConfigurationError("tournaments must be >= 1")
        if any(a <= b for a, b in zip(self.stage_plan, self.stage_plan[1:])):
            raise ConfigurationError(f"stage sizes must strictly decrease, got {self.stage_plan}")
        if len(self.groups) != len(self.stage_plan) - 1:
            raise ConfigurationError("need one group count per stage transition")
        for size, n_groups in zip(self.stage_plan[1:], self.groups):
            if n_groups < 1 or size % n_groups:
                raise ConfigurationError(f"{size} survivors cannot be split evenly across {n_groups} groups")


@dataclass(frozen=True)
class StaticStagePlan:
    c: tuple = field(default=(5, 2, 2, 1))

    def __post_init__(self):
        object.__setattr__(self, "c", tuple(self.c))
        if not self.c or any(c < 1 for c in self.c):
            raise ConfigurationError(f"every stage needs at least one batch, got {self.c}")

    @classmethod
    def parse(cls, text: str) -> "StaticStagePlan":
        """Parse ``"5-2-2-1"`` (or comma separated) into a plan."""
        try:
            return cls(tuple(int(part) for part in text.replace(",", "-").split("-") if part))
        except ValueError:
            raise ConfigurationError(f"cannot parse stage plan {text!r}") from None


def sliding_windows(n: int, window: int, stride: int) -> list[tuple[int, int]]:
    """Window ``[start, end)`` bounds for one bottom-up pass over ``n`` items.

    Windows slide from the bottom of the list toward the top; when ``n`` is
    not a multiple of the stride the last (topmost) window is smaller.
    """
    if n < 2:
        return []
    bounds = []
    end = n
    while True:
        start = max(0, end - window)
        bounds.append((start, end))
        if start == 0:
            return bounds
        end -= stride


def run_sliding_window(task: QueryTask, cfg: SlidingWindowConfig, backend, strategy: str | None = None):
    """Bottom-up overlapping windows; a failed window keeps its prior order."""
    order = task.doc_ids
    trace = RunTrace(query_id=task.query_id, strategy=strategy or f"sw-{cfg.passes}")
    capacity = max(cfg.window, DEFAULT_CAPACITY)
    for _ in range(cfg.passes):
        windows = sliding_windows(len(order), cfg.window, cfg.stride)
        failures = 0
        for start, end in windows:
            # windows overlap, so each must see the previous window's output
            (result,) = call_batches(backend, task, [order[start:end]], capacity)
            trace.calls_made += 1
            if isinstance(result, RerankResult):
                order[start:end] = list(result.ordering)
            else:
                failures += 1
        trace.failures += failures
        trace.iterations += 1
        trace.per_iteration.append(
            {"selected_count": len(order), "batch_sizes": [e - s for s, e in windows], "threshold": None, "failures": failures}
        )
    trace.stop_reason = "fixed_passes"
    trace.final_ranking = list(order)
    return trace.final_ranking, trace


def _index_modulo_groups(docs: Sequence[str], n_groups: int) -> list[list[str]]:
    """Group ``i`` takes positions ``j * n_groups + i`` that exist."""
    per_group = -(-len(docs) // n_groups)
    groups = []
    for i in range(n_groups):
        group = []
        for j in range(per_group):
            idx = j * n_groups + i
            if idx < len(docs):
                group.append(docs[idx])
        if group:
            groups.append(group)
    return groups


def tourrank_stages(n: int, cfg: TourRankConfig) -> list[bool]:
    """Which stages run for a pool of ``n`` documents.

    Stage ``j`` (1-based) is skipped when ``n`` is already no larger than
    the number of documents it would keep, so nothing runs at all once ``n``
    is at most the final survivor count.
    """
    return [n > target for target in cfg.stage_plan[1:]]


def run_tourrank(task: QueryTask, cfg: TourRankConfig, backend, strategy: str | None = None):
    """Multi-stage tournament selection, repeated ``cfg.tournaments`` times.

    In every stage the surviving documents are dealt into groups by index
    modulo the group count, each group is shuffled and reranked, and the top
    of each group advances.  Survivors of stage ``j`` earn ``j`` points (all
    present documents earn the points of skipped stages).  Documents are
    finally ordered by total points, ties by retrieval rank.
    """
    ids = task.doc_ids
    n = len(ids)
    trace = RunTrace(query_id=task.query_id, strategy=strategy or f"tourrank-{cfg.tournaments}")
    points = dict.fromkeys(ids, 0)
    runs = tourrank_stages(n, cfg)
    capacity = max(DEFAULT_CAPACITY, -(-n // min(cfg.groups)))
    for tournament in range(cfg.tournaments if any(runs) else 0):
        rng = derive_rng(cfg.seed, task.query_id, "tourrank", tournament)
        alive = list(ids)
        for stage, (target, n_groups, active) in enumerate(zip(cfg.stage_plan[1:], cfg.groups, runs), start=1):
            if active:
                keep = target // n_groups
                groups = [[g[i] for i in rng.permutation(len(g))] for g in _index_modulo_groups(alive, n_groups)]
                # groups no larger than the quota advance without a call
                to_call = [g for g in groups if len(g) > keep]
                survivors = {d for g in groups if len(g) <= keep for d in g}
                results = call_batches(backend, task, to_call, capacity)
                trace.calls_made += len(to_call)
                failures = sum(not isinstance(r, RerankResult) for r in results)
                trace.failures += failures
                for group, result in zip(to_call, results):
                    # a failed group falls back to the order it was sent in
                    ranked = list(result.ordering) if isinstance(result, RerankResult) else group
                    survivors.update(ranked[:keep])
                alive = [d for d in alive if d in survivors]
                trace.per_iteration.append(
                    {
                        "tournament": tournament,
                        "stage": stage,
                        "selected_count": sum(len(g) for g in groups),
                        "batch_sizes": [len(g) for g in to_call],
                        "threshold": None,
                        "failures": failures,
                    }
                )
            for doc_id in alive:
                points[doc_id] += stage
        trace.iterations += 1
    rank = {doc_id: i for i, doc_id in enumerate(ids)}
    trace.final_ranking = sorted(ids, key=lambda d: (-points[d], rank[d]))
    trace.stop_reason = "fixed_stages"
    trace.extra["points"] = points
    return trace.final_ranking, trace


def run_trueskill_static(
    task: QueryTask,
    plan: StaticStagePlan,
    cfg: SchedulerConfig | None = None,
    backend=None,
    strategy: str | None = None,
):
    """Rerank the top-(m * c_j) documents by mean at every stage j.

    Uses the same initialization, rating update and tie-breaks as the
    adaptive engine but no uncertainty modelling.  When fewer than
    ``m * c_j`` documents exist the stage is clamped to what is available.
    """
    cfg = cfg or SchedulerConfig()
    state = initialize_beliefs(task, cfg)
    env, doc_ids = state.env, state.doc_ids
    ratings = list(state.ratings)
    trace = RunTrace(query_id=task.query_id, strategy=strategy or "ts-" + "-".join(map(str, plan.c)))
    for c_j in plan.c:
        state = BeliefState(doc_ids, ratings, env, state.k)
        rank = {doc_id: i for i, doc_id in enumerate(doc_ids)}
        top = [rank[d] for d in final_order(state)[: cfg.m * c_j]]
        batches = [top[s:s + cfg.m] for s in range(0, len(top), cfg.m)]
        batches = [b for b in batches if len(b) >= 2]
        results = call_batches(backend, task, [[doc_ids[i] for i in b] for b in batches], cfg.m)
        ratings = apply_updates(ratings, doc_ids, batches, results, env)
        failures = sum(not isinstance(r, RerankResult) for r in results)
        trace.calls_made += len(batches)
        trace.failures += failures
        trace.iterations += 1
        trace.per_iteration.append(
            {"selected_count": len(top), "batch_sizes": [len(b) for b in batches], "threshold": None, "failures": failures}
        )
    trace.stop_reason = "fixed_stages"
    trace.final_ranking = final_order(BeliefState(doc_ids, ratings, env, state.k))
    return trace.final_ranking, trace
