from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import brentq
from scipy.stats import norm

from acurank.belief import (
    BeliefState,
    mc_rank_oracle,
    quadrature_rank_oracle,
    select_uncertain,
    solve_threshold,
    topk_probabilities,
)
from acurank.exceptions import ConfigurationError, DomainError
from acurank.ratings import Environment, GameOutcome, rate


def state(mu, sigma, beta=0.01, k=1):
    mu = np.asarray(mu, dtype=float)
    sigma = np.broadcast_to(np.asarray(sigma, dtype=float), mu.shape)
    return BeliefState.from_arrays(mu, sigma, Environment(beta=beta), k)


def random_state(rng, n, k):
    mu = rng.uniform(0, 30, n)
    sigma = rng.uniform(0.5, 8, n)
    return BeliefState.from_arrays(mu, sigma, Environment(beta=float(rng.uniform(0.5, 5))), k)


def test_identical_beliefs_threshold_is_the_common_mean():
    assert solve_threshold(state([0.0] * 10, 1.0, k=5), 5) == pytest.approx(0.0, abs=1e-7)


def test_quarter_quantile_threshold():
    # sigma and beta chosen so the effective std is exactly 2
    s = state([10.0] * 4, np.sqrt(4.0 - 1.0), beta=1.0)
    assert solve_threshold(s, 1) == pytest.approx(11.348979500392163, abs=1e-6)


def test_threshold_matches_independent_root_finder():
    mu = np.arange(1, 21, dtype=float)
    s = state(mu, np.sqrt(9.0 - 1e-4), beta=0.01, k=10)
    reference = brentq(lambda t: norm.sf((t - mu) / 3.0).sum() - 10, -100, 100, xtol=1e-12)
    assert solve_threshold(s, 10) == pytest.approx(reference, abs=1e-6)


def test_threshold_is_deterministic():
    s = random_state(np.random.default_rng(0), 50, 10)
    assert solve_threshold(s, 10) == solve_threshold(s, 10)


def test_threshold_rejects_bad_rank():
    s = state([0.0, 1.0], 1.0)
    for r in (0, 3):
        with pytest.raises(DomainError):
            solve_threshold(s, r)


def test_identical_beliefs_have_probability_half():
    probs = topk_probabilities(state([3.0] * 10, 2.0, k=5))
    np.testing.assert_allclose(probs.s, 0.5, atol=1e-7)


def test_dominating_mean():
    probs = topk_probabilities(state([1e6] + [0.0] * 9, 0.5, k=1))
    assert probs.s[0] >= 0.999


@settings(max_examples=200, deadline=None)
@given(
    n=st.integers(5, 500),
    data=st.data(),
    seed=st.integers(0, 2**32 - 1),
)
def test_probabilities_sum_to_k(n, data, seed):
    k = data.draw(st.integers(1, n))
    rng = np.random.default_rng(seed)
    scale = 10.0 ** rng.uniform(-3, 3)
    s = BeliefState.from_arrays(
        rng.normal(0, scale, n), scale * rng.uniform(0.01, 3, n), Environment(beta=scale * rng.uniform(0.01, 2)), k
    )
    probs = topk_probabilities(s)
    assert abs(probs.s.sum() - k) <= 1e-6
    assert np.all((probs.s >= 0) & (probs.s <= 1))


def test_probability_increases_with_mean_when_sigma_equal():
    rng = np.random.default_rng(4)
    for _ in range(50):
        mu = np.sort(rng.uniform(0, 20, 30))
        probs = topk_probabilities(state(mu, 2.0, beta=1.0, k=7))
        assert np.all(np.diff(probs.s) > 0)


def test_monte_carlo_symmetry_and_separation():
    p = mc_rank_oracle(state([1.0, 1.0], 1.0), 1, samples=20_000, seed=1)
    assert np.all(np.abs(p - 0.5) <= 3 * np.sqrt(0.25 / 20_000))
    p = mc_rank_oracle(state([100.0, 0.0], 0.01), 1, samples=1000, seed=1)
    np.testing.assert_array_equal(p, [1.0, 0.0])


def test_monte_carlo_is_independent_of_worker_count():
    s = random_state(np.random.default_rng(5), 12, 4)
    one = mc_rank_oracle(s, 4, samples=35_000, seed=9, workers=1)
    many = mc_rank_oracle(s, 4, samples=35_000, seed=9, workers=3)
    np.testing.assert_array_equal(one, many)


def test_monte_carlo_rejects_few_samples():
    with pytest.raises(ConfigurationError):
        mc_rank_oracle(state([0.0, 1.0], 1.0), 1, samples=999, seed=0)


def test_quadrature_matches_monte_carlo_on_five_documents():
    s = BeliefState.from_arrays([5.0, 4.0, 3.5, 2.0, 1.0], [1.5, 1.0, 2.0, 1.0, 0.8], Environment(beta=1.0), 2)
    exact = quadrature_rank_oracle(s, 2)
    mc = mc_rank_oracle(s, 2, samples=200_000, seed=3)
    assert np.max(np.abs(exact - mc)) <= 0.01
    assert exact.sum() == pytest.approx(2.0, abs=1e-8)


def test_quadrature_limited_to_small_lists():
    with pytest.raises(DomainError):
        quadrature_rank_oracle(state(np.arange(9.0), 1.0), 1)


def test_select_uncertain_boundaries():
    assert select_uncertain([0.005, 0.5, 0.995], 0.01) == {1}
    assert select_uncertain([0.01, 0.99], 0.01) == frozenset()
    probs = topk_probabilities(state([2.0] * 100, 1.0, k=10))
    assert len(select_uncertain(probs, 0.01)) == 100
    for bad in (0.0, 0.5, -1.0):
        with pytest.raises(ConfigurationError):
            select_uncertain([0.5], bad)


def test_belief_state_validation():
    env = Environment(beta=1.0)
    with pytest.raises(ValueError):
        BeliefState.from_arrays([1.0, 2.0], [1.0, 1.0], env, 3)
    with pytest.raises(ValueError):
        BeliefState.from_arrays([1.0, 2.0], [1.0, 1.0], env, 1, doc_ids=["a", "a"])


def test_consistent_outcomes_shrink_the_uncertain_set():
    # perfect-oracle refinement over n=30: rerank the uncertain set in batches
    # of 10 by true strength.  The two documents straddling the threshold keep
    # a mean gap of order beta, so they never fully polarize; everything else
    # does, and the set falls below the default stopping size.
    rng = np.random.default_rng(11)
    n, k, eps = 30, 5, 0.01
    strength = rng.permutation(n)
    mu = 10 + strength / 3 + rng.normal(0, 2, n)
    s = BeliefState.from_arrays(mu, mu / 3, Environment(beta=float(np.mean(mu / 3) / 2)), k)
    ratings = list(s.ratings)
    sizes = []
    for _ in range(40):
        s = BeliefState(s.doc_ids, ratings, s.env, k)
        uncertain = sorted(select_uncertain(topk_probabilities(s), eps), key=lambda i: -s.mu[i])
        sizes.append(len(uncertain))
        for start in range(0, len(uncertain), 10):
            batch = uncertain[start:start + 10]
            if len(batch) < 2:
                continue
            order = sorted(batch, key=lambda i: -strength[i])
            outcome = GameOutcome([str(i) for i in batch], [ratings[i] for i in batch], [order.index(i) for i in batch])
            for i, post in zip(batch, rate(outcome, s.env)):
                ratings[i] = post
    assert all(b <= a for a, b in zip(sizes, sizes[1:]))
    assert sizes[5] < 10
    assert 2 <= sizes[-1] <= 4
    top = sorted(range(n), key=lambda i: -s.mu[i])[:k]
    assert set(top) == set(np.argsort(-strength)[:k])
