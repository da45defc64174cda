"""Gaussian relevance beliefs and the multiplayer TrueSkill update.

A listwise reranker output over a batch is treated as a free-for-all game
between single-document teams with a strict finishing order.  Posterior
beliefs come from expectation propagation on the usual TrueSkill factor
graph: skill -> performance -> adjacent performance differences -> win
truncations.  The message schedule mirrors the reference ``trueskill``
package so results agree with it to floating-point noise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Hashable, Mapping, Sequence

from scipy.special import log_ndtr, ndtri

from .exceptions import ConfigurationError, ContractViolation, InvalidOutcomeError

__all__ = [
    "DEFAULT_MU",
    "DEFAULT_SIGMA",
    "DEFAULT_BETA",
    "Rating",
    "Environment",
    "GameOutcome",
    "v_exceeds",
    "w_exceeds",
    "rate",
    "transform_outcome",
]

DEFAULT_MU = 25.0
DEFAULT_SIGMA = DEFAULT_MU / 3.0
DEFAULT_BETA = DEFAULT_SIGMA / 2.0
DEFAULT_DRAW_PROBABILITY = 0.10

# Convergence threshold and sweep cap of the inner difference-chain loop.
MIN_DELTA = 1e-4
MAX_SWEEPS = 10

# Floor on posterior variance; repeated confident updates can underflow.
MIN_VARIANCE = 1e-12

_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)
_SQRT2 = math.sqrt(2.0)
_LOG_SPACE_BELOW = -6.0
_ASYMPTOTIC_BELOW = -30.0
_W_MAX = math.nextafter(1.0, 0.0)


@dataclass(frozen=True)
class Rating:
    """Gaussian belief N(mu, sigma^2) over one document's latent relevance."""

    mu: float = DEFAULT_MU
    sigma: float = DEFAULT_SIGMA

    def __post_init__(self):
        if not math.isfinite(self.mu):
            raise ValueError(f"mu must be finite, got {self.mu!r}")
        if not (math.isfinite(self.sigma) and self.sigma > 0):
            raise ValueError(f"sigma must be finite and positive, got {self.sigma!r}")


@dataclass(frozen=True)
class Environment:
    """Global game parameters.

    ``beta`` is the observation noise added to every latent score.
    ``dynamics`` is extra variance injected before each update; it stays 0
    because document relevance does not drift within a query.

    Reranker outputs never contain ties, but ``draw_probability`` still sets
    the margin a performance gap must clear to count as a win.  The default
    matches the stock TrueSkill environment; pass 0 for a margin-free update.
    """

    beta: float = DEFAULT_BETA
    dynamics: float = 0.0
    draw_probability: float = DEFAULT_DRAW_PROBABILITY

    def __post_init__(self):
        if not (math.isfinite(self.beta) and self.beta > 0):
            raise ConfigurationError(f"beta must be positive, got {self.beta!r}")
        if not (math.isfinite(self.dynamics) and self.dynamics >= 0):
            raise ConfigurationError(f"dynamics must be >= 0, got {self.dynamics!r}")
        if not 0.0 <= self.draw_probability < 1.0:
            raise ConfigurationError(f"draw_probability must lie in [0, 1), got {self.draw_probability!r}")

    @property
    def draw_margin(self) -> float:
        """Win margin between two single-document teams, in score units."""
        return float(ndtri((self.draw_probability + 1.0) / 2.0)) * _SQRT2 * self.beta


@dataclass(frozen=True)
class GameOutcome:
    """Participants of one game with their finishing ranks (0 = best)."""

    ids: tuple
    ratings: tuple
    ranks: tuple

    def __post_init__(self):
        n = len(self.ids)
        if n < 2:
            raise InvalidOutcomeError(f"a game needs at least 2 participants, got {n}")
        if len(set(self.ids)) != n:
            raise InvalidOutcomeError("participant ids must be unique")
        if len(self.ratings) != n or len(self.ranks) != n:
            raise InvalidOutcomeError("ids, ratings and ranks must have equal length")
        if sorted(self.ranks) != list(range(n)):
            raise InvalidOutcomeError(f"ranks must be a permutation of 0..{n - 1}")

    def __len__(self):
        return len(self.ids)


def _moments(t: float) -> tuple[float, float]:
    """Return ``(v, 1 - w)`` for a win observed at standardized margin ``t``.

    ``1 - w`` is returned directly because it is the quantity the update
    divides by, and forming it from ``w`` loses all precision deep in the
    lower tail.
    """
    if t < _ASYMPTOTIC_BELOW:
        # Inverse Mills ratio expansion in y = 1/|t|.
        y = -1.0 / t
        y2 = y * y
        gap = y * (1 + y2 * (-2 + y2 * (10 + y2 * (-74 + y2 * (706 + y2 * (-8162 + y2 * 110410))))))
        one_minus_w = y2 * (1 + y2 * (-6 + y2 * (50 + y2 * (-518 + y2 * (6354 - 89782 * y2)))))
        return -t + gap, one_minus_w
    if t < _LOG_SPACE_BELOW:
        v = math.exp(-0.5 * t * t - _LOG_SQRT_2PI - float(log_ndtr(t)))
    else:
        cdf = 0.5 * math.erfc(-t / _SQRT2)
        v = math.exp(-0.5 * t * t - _LOG_SQRT_2PI) / cdf
    return v, 1.0 - v * (v + t)


def v_exceeds(t: float) -> float:
    """Additive mean correction pdf(t)/cdf(t) for a win at margin ``t``."""
    return _moments(float(t))[0]


def w_exceeds(t: float) -> float:
    """Multiplicative variance correction v(t)*(v(t)+t), kept inside (0, 1)."""
    w = 1.0 - _moments(float(t))[1]
    return min(max(w, 0.0), _W_MAX)


def rate(outcome: GameOutcome, env: Environment = Environment(), min_delta: float = MIN_DELTA) -> list[Rating]:
    """Update every participant's rating from one strictly ordered game.

    Returns one :class:`Rating` per participant, in the order of
    ``outcome.ids``.  Works in natural parameters (precision ``pi`` and
    precision-adjusted mean ``tau``) throughout.
    """
    n = len(outcome)
    order = sorted(range(n), key=outcome.ranks.__getitem__)
    ratings = [outcome.ratings[i] for i in order]
    beta2 = env.beta * env.beta
    margin = env.draw_margin
    prior_var = [r.sigma * r.sigma + env.dynamics * env.dynamics for r in ratings]

    # Messages from the skill layer into each performance variable.
    down_pi = [1.0 / (var + beta2) for var in prior_var]
    down_tau = [r.mu * p for r, p in zip(ratings, down_pi)]

    n_diff = n - 1
    left_pi = [0.0] * n_diff  # diff factor j -> performance j
    left_tau = [0.0] * n_diff
    right_pi = [0.0] * n_diff  # diff factor j -> performance j + 1
    right_tau = [0.0] * n_diff
    diff_pi = [0.0] * n_diff  # diff factor j -> difference j
    diff_tau = [0.0] * n_diff
    trunc_pi = [0.0] * n_diff  # truncation j -> difference j
    trunc_tau = [0.0] * n_diff

    def cavity(i, skip):
        # performance i marginal without the message from diff factor `skip`
        pi, tau = down_pi[i], down_tau[i]
        if i < n_diff and i != skip:
            pi += left_pi[i]
            tau += left_tau[i]
        if i > 0 and i - 1 != skip:
            pi += right_pi[i - 1]
            tau += right_tau[i - 1]
        return pi, tau

    def send_down(j):
        a_pi, a_tau = cavity(j, j)
        b_pi, b_tau = cavity(j + 1, j)
        var = 1.0 / a_pi + 1.0 / b_pi
        diff_pi[j] = 1.0 / var
        diff_tau[j] = (a_tau / a_pi - b_tau / b_pi) / var

    def truncate(j):
        old_pi = diff_pi[j] + trunc_pi[j]
        old_tau = diff_tau[j] + trunc_tau[j]
        c_pi, c_tau = diff_pi[j], diff_tau[j]
        sqrt_pi = math.sqrt(c_pi)
        v, one_minus_w = _moments(c_tau / sqrt_pi - margin * sqrt_pi)
        new_pi = c_pi / one_minus_w
        new_tau = (c_tau + sqrt_pi * v) / one_minus_w
        trunc_pi[j] = new_pi - c_pi
        trunc_tau[j] = new_tau - c_tau
        return max(abs(new_tau - old_tau), math.sqrt(abs(new_pi - old_pi)))

    def sum_message(j, a_pi, a_tau, sign):
        # message for x = a + sign * d_j, where d_j carries the truncation message
        t_pi = trunc_pi[j]
        if t_pi <= 0.0 or a_pi <= 0.0:
            return 0.0, 0.0
        var = 1.0 / a_pi + 1.0 / t_pi
        mean = a_tau / a_pi + sign * trunc_tau[j] / t_pi
        return 1.0 / var, mean / var

    def send_right(j):
        right_pi[j], right_tau[j] = sum_message(j, *cavity(j, j), -1.0)

    def send_left(j):
        left_pi[j], left_tau[j] = sum_message(j, *cavity(j + 1, j), +1.0)

    for _ in range(MAX_SWEEPS):
        if n_diff == 1:
            send_down(0)
            delta = truncate(0)
        else:
            delta = 0.0
            for j in range(n_diff - 1):
                send_down(j)
                delta = max(delta, truncate(j))
                send_right(j)
            for j in range(n_diff - 1, 0, -1):
                send_down(j)
                delta = max(delta, truncate(j))
                send_left(j)
        if delta <= min_delta:
            break
    send_left(0)
    send_right(n_diff - 1)

    posterior = [None] * n
    for i in range(n):
        up_pi = up_tau = 0.0
        if i < n_diff:
            up_pi += left_pi[i]
            up_tau += left_tau[i]
        if i > 0:
            up_pi += right_pi[i - 1]
            up_tau += right_tau[i - 1]
        a = 1.0 / (1.0 + beta2 * up_pi)
        pi = 1.0 / prior_var[i] + a * up_pi
        tau = ratings[i].mu / prior_var[i] + a * up_tau
        var = max(1.0 / pi, MIN_VARIANCE)
        posterior[order[i]] = Rating(mu=tau / pi, sigma=math.sqrt(var))
    return posterior


def transform_outcome(
    batch_ids: Sequence[Hashable],
    ordering,
    ratings: Mapping[Hashable, Rating] | Sequence[Rating],
) -> GameOutcome:
    """Turn a reranked batch into a game outcome.

    ``ordering`` is either a sequence of ids (most relevant first) or any
    object with an ``ordering`` attribute such as a ``RerankResult``.
    ``ratings`` is keyed by id or aligned with ``batch_ids``.
    """
    ordering = list(getattr(ordering, "ordering", ordering))
    batch_ids = list(batch_ids)
    if len(ordering) != len(batch_ids) or set(ordering) != set(batch_ids) or len(set(ordering)) != len(ordering):
        raise ContractViolation("reranked ordering is not a permutation of the batch ids")
    position = {doc_id: rank for rank, doc_id in enumerate(ordering)}
    if isinstance(ratings, Mapping):
        batch_ratings = tuple(ratings[doc_id] for doc_id in batch_ids)
    else:
        batch_ratings = tuple(ratings)
    return GameOutcome(
        ids=tuple(batch_ids),
        ratings=batch_ratings,
        ranks=tuple(position[doc_id] for doc_id in batch_ids),
    )
