from __future__ import annotations

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from acurank.backends import NoisyReranker, OracleReranker, RerankResult
from acurank.belief import BeliefState
from acurank.engine import (
    InitRule,
    PartitionRule,
    QueryTask,
    RunTrace,
    SchedulerConfig,
    StopRule,
    apply_updates,
    budget_schedule,
    initialize_beliefs,
    partition,
    run_acurank,
)
from acurank.exceptions import ConfigurationError, DomainError, RerankerOutputError, TransportError
from acurank.ratings import Environment, Rating

from conftest import distinct_grade_task, make_task


class Counting:
    """Wraps a backend, counting invocations and failing on chosen calls."""

    def __init__(self, inner, fail_every=0, error=None):
        self.inner = inner
        self.calls = 0
        self.fail_every = fail_every
        self.error = error or RerankerOutputError("garbled")

    def __call__(self, request):
        self.calls += 1
        if self.fail_every and self.calls % self.fail_every == 0:
            raise self.error
        return self.inner(request)


def test_score_initialization():
    task = make_task([1, 0], scores=[30.0, 15.0])
    s = initialize_beliefs(task, SchedulerConfig())
    assert list(s.mu) == [30.0, 15.0]
    assert list(s.sigma) == pytest.approx([10.0, 5.0])
    assert s.env.beta == pytest.approx(3.75)


def test_default_initialization():
    s = initialize_beliefs(make_task([1, 0, 2]), SchedulerConfig(init_rule="default_trueskill"))
    assert np.all(s.mu == 25.0) and np.allclose(s.sigma, 25 / 3)
    assert s.env.beta == pytest.approx(25 / 6)


def test_non_positive_scores_are_shifted():
    s = initialize_beliefs(make_task([0, 1], scores=[-2.0, 1.0]), SchedulerConfig())
    assert sorted(s.mu) == pytest.approx([0.1, 3.1])
    assert np.allclose(s.sigma / s.mu, 1 / 3)


def test_query_task_validation():
    with pytest.raises(ValueError):
        QueryTask("q", "x", (("a", 1.0), ("b", 2.0)))
    with pytest.raises(ValueError):
        QueryTask("q", "x", (("a", 2.0), ("a", 1.0)))
    with pytest.raises(ValueError):
        QueryTask("q", "x", (("a", float("inf")), ("b", 1.0)))
    with pytest.raises(DomainError):
        initialize_beliefs(QueryTask("q", "x", ()), SchedulerConfig())


def test_config_validation_and_variants():
    for bad in ({"epsilon": 0.5}, {"tau": 0}, {"m": 1}, {"k": 0}, {"max_calls": -1}, {"stop_rule": "never"}):
        with pytest.raises(ConfigurationError):
            SchedulerConfig(**bad)
    assert SchedulerConfig().with_variant("h").epsilon == 1e-4
    hh = SchedulerConfig().with_variant("hh")
    assert (hh.epsilon, hh.tau) == (1e-4, 5)
    with pytest.raises(ConfigurationError):
        SchedulerConfig.from_mapping({"epsilonn": 0.1})
    cfg = SchedulerConfig.from_mapping({"stop_rule": "topk_stability", "max_calls": 4})
    assert cfg.stop_rule is StopRule.TOPK_STABILITY
    assert SchedulerConfig.from_mapping(cfg.to_dict()) == cfg


def _state(mu):
    mu = np.asarray(mu, dtype=float)
    return BeliefState.from_arrays(mu, np.ones_like(mu), Environment(beta=0.5), 1)


def test_partition_examples():
    cfg = SchedulerConfig(m=20)
    s = _state(np.arange(45.0, 0, -1))
    assert [len(b) for b in partition(range(45), s, cfg)] == [20, 20, 5]
    assert [len(b) for b in partition(range(12), _state(np.arange(12.0)), cfg)] == [12]
    assert partition(range(4), _state([5, 9, 1, 7]), SchedulerConfig(m=2)) == [[1, 3], [0, 2]]


def test_partition_tie_break_sigma_then_rank():
    s = BeliefState.from_arrays([1.0, 1.0, 1.0], [2.0, 1.0, 1.0], Environment(beta=0.5), 1)
    assert partition(range(3), s, SchedulerConfig(m=3)) == [[1, 2, 0]]


def test_random_partition_is_seeded_and_disjoint():
    s = _state(np.arange(50.0))
    cfg = SchedulerConfig(m=7, partition_rule=PartitionRule.RANDOM)
    a = partition(range(50), s, cfg, np.random.default_rng(3))
    b = partition(range(50), s, cfg, np.random.default_rng(3))
    assert a == b
    flat = [i for batch in a for i in batch]
    assert sorted(flat) == list(range(50))


def test_budget_schedule_examples():
    s = _state([10, 9, 1, 2, 5, 6])
    batches = [[2, 3], [0, 1], [4, 5]]
    assert budget_schedule(batches, 2, s) == [[0, 1], [4, 5]]
    assert budget_schedule(batches, 0, s) == []
    assert budget_schedule([[0, 1]], 5, s) == [[0, 1]]
    with pytest.raises(ConfigurationError):
        budget_schedule(batches, -1, s)


def test_two_confident_documents_stop_after_one_call():
    task = make_task([3, 0], scores=[40.0, 1.0])
    backend = Counting(OracleReranker())
    ranking, trace = run_acurank(task, SchedulerConfig(), backend)
    assert trace.calls_made == backend.calls <= 1
    assert ranking == [task.doc_ids[0], task.doc_ids[1]]
    assert trace.stop_reason in ("uncertain_count", "no_uncertain")


def test_single_document_needs_no_calls():
    ranking, trace = run_acurank(make_task([2]), SchedulerConfig(), OracleReranker())
    assert ranking == ["d000"] and trace.calls_made == 0
    assert trace.stop_reason == "too_few_documents"


@pytest.mark.parametrize("seed", range(20))
def test_perfect_oracle_recovers_top_k(seed):
    task = distinct_grade_task(30, seed)
    ranking, trace = run_acurank(task, SchedulerConfig(k=5, m=10, epsilon=1e-4), OracleReranker())
    true_top = [d for d, _ in sorted(task.passages.items(), key=lambda kv: -kv[1].true_relevance)][:5]
    assert ranking[:5] == true_top
    assert trace.calls_made == sum(len(r["batch_sizes"]) for r in trace.per_iteration)


def test_uncertain_set_shrinks_under_oracle():
    steps = shrinks = 0
    for seed in range(40):
        task = distinct_grade_task(60, seed, query_id=f"q{seed}")
        _, trace = run_acurank(task, SchedulerConfig(), OracleReranker())
        sizes = [r["selected_count"] for r in trace.per_iteration]
        steps += len(sizes) - 1
        shrinks += sum(b <= a for a, b in zip(sizes, sizes[1:]))
    assert shrinks >= 0.95 * steps


@settings(max_examples=150, deadline=None)
@given(
    n=st.integers(2, 80),
    budget=st.integers(0, 12),
    m=st.integers(2, 25),
    seed=st.integers(0, 10_000),
    variant=st.sampled_from(["default", "h", "hh"]),
)
def test_budget_is_never_exceeded(n, budget, m, seed, variant):
    rng = np.random.default_rng(seed)
    task = make_task(rng.integers(0, 4, n).tolist(), (rng.normal(0, 2, n) + 5).tolist())
    cfg = SchedulerConfig(max_calls=budget, m=m, k=min(10, n)).with_variant(variant)
    backend = Counting(NoisyReranker(1.0, seed=seed))
    ranking, trace = run_acurank(task, cfg, backend)
    assert trace.calls_made <= budget
    assert trace.calls_made == backend.calls
    assert sorted(ranking) == sorted(task.doc_ids)


def test_failed_calls_are_counted_but_not_applied():
    task = distinct_grade_task(50, 1)
    backend = Counting(OracleReranker(), fail_every=3)
    ranking, trace = run_acurank(task, SchedulerConfig(max_calls=12), backend)
    assert trace.calls_made == backend.calls == 12
    assert trace.failures == 4
    assert sum(r["failures"] for r in trace.per_iteration) == 4
    assert sorted(ranking) == sorted(task.doc_ids)


def test_every_call_failing_leaves_retrieval_order():
    task = distinct_grade_task(30, 2)
    backend = Counting(OracleReranker(), fail_every=1)
    ranking, trace = run_acurank(task, SchedulerConfig(max_iterations=3), backend)
    assert ranking == task.doc_ids
    assert trace.failures == trace.calls_made == backend.calls


def test_fatal_transport_error_propagates():
    task = distinct_grade_task(30, 3)
    backend = Counting(OracleReranker(), fail_every=1, error=TransportError("denied", status=403, retryable=False))
    with pytest.raises(TransportError):
        run_acurank(task, SchedulerConfig(), backend)


def test_disjoint_updates_commute_bit_for_bit():
    rng = np.random.default_rng(7)
    doc_ids = [f"d{i}" for i in range(60)]
    ratings = [Rating(float(m), float(s)) for m, s in zip(rng.uniform(1, 20, 60), rng.uniform(0.5, 5, 60))]
    env = Environment(beta=1.3)
    perm = rng.permutation(60)
    batches = [perm[i:i + 20].tolist() for i in range(0, 60, 20)]
    results = [RerankResult(tuple(doc_ids[i] for i in rng.permutation(b))) for b in batches]
    canonical = apply_updates(ratings, doc_ids, batches, results, env)
    for _ in range(2):
        order = rng.permutation(len(batches))
        shuffled = apply_updates(ratings, doc_ids, [batches[i] for i in order], [results[i] for i in order], env)
        assert shuffled == canonical


def test_parallel_batches_match_sequential():
    task = distinct_grade_task(100, 4)
    a, ta = run_acurank(task, SchedulerConfig(), NoisyReranker(1.0, seed=2))
    b, tb = run_acurank(task, SchedulerConfig(), NoisyReranker(1.0, seed=2), max_workers=4)
    assert a == b and ta.to_dict() == tb.to_dict()


def test_topk_stability_stop():
    task = distinct_grade_task(40, 5)
    cfg = SchedulerConfig(stop_rule="topk_stability", stability_window=2)
    _, trace = run_acurank(task, cfg, OracleReranker())
    assert trace.stop_reason == "topk_stability"
    assert trace.iterations >= 2


def test_budget_only_runs_until_budget():
    task = distinct_grade_task(40, 6)
    _, trace = run_acurank(task, SchedulerConfig(stop_rule="budget_only", max_calls=7), NoisyReranker(1.0))
    assert trace.calls_made == 7 and trace.stop_reason == "budget"


def test_iteration_cap():
    task = make_task([1] * 40, scores=[5.0] * 40)
    _, trace = run_acurank(task, SchedulerConfig(max_iterations=3), NoisyReranker(1.0))
    assert trace.iterations == 3 and trace.stop_reason == "max_iterations"


def test_trace_json_round_trip():
    task = distinct_grade_task(25, 8)
    _, trace = run_acurank(task, SchedulerConfig(max_calls=4), OracleReranker())
    data = json.loads(trace.to_json())
    assert RunTrace.from_dict(data) == trace
    assert data["stop_reason"] == trace.per_iteration[-1]["stop_reason"]
    assert all({"selected_count", "batch_sizes", "threshold"} <= set(r) for r in trace.per_iteration)


def test_default_trueskill_init_runs():
    task = distinct_grade_task(30, 9)
    ranking, trace = run_acurank(task, SchedulerConfig(k=5, m=10, init_rule=InitRule.DEFAULT_TRUESKILL), OracleReranker())
    true_top = [d for d, _ in sorted(task.passages.items(), key=lambda kv: -kv[1].true_relevance)][:5]
    assert set(ranking[:5]) == set(true_top)
