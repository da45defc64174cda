"""Top-k membership probabilities over a set of Gaussian relevance beliefs.

Each document's latent score is ``x_i ~ N(mu_i, sigma_i^2 + beta^2)``.  The
probability that a document lands in the top ``r`` is approximated by the
chance that its score clears a common threshold ``t(r)``, chosen so that the
expected number of documents clearing it is exactly ``r``.  Two oracles for
the exact rank distribution are provided for validation: a seeded Monte
Carlo estimator and, for small lists, a quadrature over the
count-of-exceedances recursion.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Hashable, Sequence

import numpy as np
from scipy.special import ndtr

from .exceptions import ConfigurationError, DomainError
from .ratings import Environment, Rating

__all__ = [
    "BeliefState",
    "TopKProbabilities",
    "solve_threshold",
    "topk_probabilities",
    "mc_rank_oracle",
    "quadrature_rank_oracle",
    "select_uncertain",
]

BRACKET_WIDTH = 12.0
COUNT_TOLERANCE = 1e-7
MC_CHUNK = 10_000
QUADRATURE_MAX_DOCS = 8


@dataclass(frozen=True)
class BeliefState:
    """Beliefs for one query's candidate list plus the rank cutoff ``k``."""

    doc_ids: tuple
    ratings: tuple
    env: Environment
    k: int

    def __post_init__(self):
        object.__setattr__(self, "doc_ids", tuple(self.doc_ids))
        object.__setattr__(self, "ratings", tuple(self.ratings))
        n = len(self.doc_ids)
        if n == 0:
            raise DomainError("a belief state needs at least one document")
        if len(self.ratings) != n:
            raise DomainError("doc_ids and ratings must have equal length")
        if len(set(self.doc_ids)) != n:
            raise DomainError("doc_ids must be unique")
        if not 1 <= self.k <= n:
            raise DomainError(f"k must lie in [1, {n}], got {self.k}")

    @classmethod
    def from_arrays(cls, mu, sigma, env: Environment, k: int, doc_ids: Sequence[Hashable] | None = None):
        mu = np.asarray(mu, dtype=float)
        sigma = np.broadcast_to(np.asarray(sigma, dtype=float), mu.shape)
        if doc_ids is None:
            doc_ids = range(len(mu))
        return cls(tuple(doc_ids), tuple(Rating(float(m), float(s)) for m, s in zip(mu, sigma)), env, k)

    def __len__(self):
        return len(self.doc_ids)

    @property
    def mu(self) -> np.ndarray:
        return np.fromiter((r.mu for r in self.ratings), dtype=float, count=len(self.ratings))

    @property
    def sigma(self) -> np.ndarray:
        return np.fromiter((r.sigma for r in self.ratings), dtype=float, count=len(self.ratings))

    @property
    def score_std(self) -> np.ndarray:
        """Standard deviation of each latent score, sqrt(sigma^2 + beta^2)."""
        return np.sqrt(self.sigma**2 + self.env.beta**2)


@dataclass(frozen=True)
class TopKProbabilities:
    s: np.ndarray
    threshold: float

    def __len__(self):
        return len(self.s)


def _expected_count(t: float, mu: np.ndarray, std: np.ndarray) -> float:
    return float(ndtr((mu - t) / std).sum())


def solve_threshold(state: BeliefState, r: int) -> float:
    """Find ``t`` with sum_i P(x_i > t) = r by bisection.

    The expected count is strictly decreasing in ``t``, so the root is
    unique.  Bisection stops once the count is within 1e-7 of ``r`` or the
    bracket can no longer be split in floating point.
    """
    n = len(state)
    if not 1 <= r <= n:
        raise DomainError(f"r must lie in [1, {n}], got {r}")
    mu, std = state.mu, state.score_std
    spread = BRACKET_WIDTH * std.max()
    lo, hi = mu.min() - spread, mu.max() + spread
    count_lo, count_hi = _expected_count(lo, mu, std), _expected_count(hi, mu, std)
    while True:
        mid = 0.5 * (lo + hi)
        if not lo < mid < hi:
            break
        count = _expected_count(mid, mu, std)
        if abs(count - r) <= COUNT_TOLERANCE:
            return float(mid)
        if count > r:
            lo, count_lo = mid, count
        else:
            hi, count_hi = mid, count
    return float(lo if abs(count_lo - r) <= abs(count_hi - r) else hi)


def topk_probabilities(state: BeliefState) -> TopKProbabilities:
    """Approximate P(rank_i <= k) by P(x_i > t(k)) for every document."""
    t = solve_threshold(state, state.k)
    s = ndtr((state.mu - t) / state.score_std)
    return TopKProbabilities(s=s, threshold=t)


def _mc_chunk(mu, std, r, size, seed_seq):
    rng = np.random.default_rng(seed_seq)
    x = mu + std * rng.standard_normal((size, len(mu)))
    # position of each document when the sample is sorted descending
    position = np.argsort(np.argsort(-x, axis=1, kind="stable"), axis=1, kind="stable")
    return (position < r).sum(axis=0)


def mc_rank_oracle(state: BeliefState, r: int, samples: int, seed: int, workers: int = 1) -> np.ndarray:
    """Monte Carlo estimate of P(rank_i <= r) for every document.

    Samples are drawn in fixed-size chunks, each with its own spawned seed,
    so the estimate does not depend on ``workers``.
    """
    if samples < 1000:
        raise ConfigurationError(f"samples must be >= 1000, got {samples}")
    n = len(state)
    if not 1 <= r <= n:
        raise DomainError(f"r must lie in [1, {n}], got {r}")
    mu, std = state.mu, state.score_std
    sizes = [MC_CHUNK] * (samples // MC_CHUNK)
    if samples % MC_CHUNK:
        sizes.append(samples % MC_CHUNK)
    seeds = np.random.SeedSequence(seed).spawn(len(sizes))
    jobs = [(mu, std, r, size, seq) for size, seq in zip(sizes, seeds)]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            counts = list(pool.map(lambda job: _mc_chunk(*job), jobs))
    else:
        counts = [_mc_chunk(*job) for job in jobs]
    return np.sum(counts, axis=0) / samples


def quadrature_rank_oracle(state: BeliefState, r: int, nodes: int = 2048, width: float = 10.0) -> np.ndarray:
    """Numerically integrate the exact cumulative rank distribution.

    For document ``i`` the integrand is its score density times the
    probability that fewer than ``r`` other scores exceed ``x``; the latter
    comes from an O(n^2) recursion over exceedance counts.  Gauss-Legendre
    nodes cover ``mu_i +/- width`` score standard deviations.  Small lists only.
    """
    n = len(state)
    if n > QUADRATURE_MAX_DOCS:
        raise DomainError(f"quadrature oracle supports at most {QUADRATURE_MAX_DOCS} documents, got {n}")
    if not 1 <= r <= n:
        raise DomainError(f"r must lie in [1, {n}], got {r}")
    mu, std = state.mu, state.score_std
    z, weights = np.polynomial.legendre.leggauss(nodes)
    out = np.empty(n)
    for i in range(n):
        x = mu[i] + width * std[i] * z
        density = np.exp(-0.5 * ((x - mu[i]) / std[i]) ** 2) / (std[i] * np.sqrt(2.0 * np.pi))
        counts = np.zeros((n, nodes))
        counts[0] = 1.0
        for j in range(n):
            if j == i:
                continue
            above = ndtr((mu[j] - x) / std[j])
            shifted = np.zeros_like(counts)
            shifted[1:] = counts[:-1] * above
            counts = counts * (1.0 - above) + shifted
        integrand = density * counts[:r].sum(axis=0)
        out[i] = width * std[i] * np.dot(weights, integrand)
    return out


def select_uncertain(probs, epsilon: float) -> frozenset:
    """Indices whose top-k probability lies strictly inside (eps, 1 - eps)."""
    if not 0.0 < epsilon < 0.5:
        raise ConfigurationError(f"epsilon must lie in (0, 0.5), got {epsilon!r}")
    s = np.asarray(getattr(probs, "s", probs), dtype=float)
    return frozenset(np.flatnonzero((s > epsilon) & (s < 1.0 - epsilon)).tolist())
