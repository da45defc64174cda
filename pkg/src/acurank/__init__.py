"""Uncertainty-aware adaptive listwise reranking with TrueSkill beliefs."""

from __future__ import annotations

__version__ = "0.1.0"

from .backends import (
    HttpReranker,
    NoisyReranker,
    OracleReranker,
    Passage,
    Reranker,
    RerankRequest,
    RerankResult,
    rerank_http,
    rerank_noisy,
    rerank_oracle,
)
from .baselines import (
    SlidingWindowConfig,
    StaticStagePlan,
    TourRankConfig,
    run_sliding_window,
    run_tourrank,
    run_trueskill_static,
)
from .belief import (
    BeliefState,
    TopKProbabilities,
    mc_rank_oracle,
    quadrature_rank_oracle,
    select_uncertain,
    solve_threshold,
    topk_probabilities,
)
from .data import SyntheticSpec, generate_synthetic, load_corpus, load_qrels, load_queries, load_run, write_run
from .engine import QueryTask, RunTrace, SchedulerConfig, run_acurank
from .exceptions import (
    AcuRankError,
    ConfigurationError,
    ContractViolation,
    DataError,
    DomainError,
    EvaluationError,
    InvalidOutcomeError,
    RerankerError,
    RerankerOutputError,
    TransportError,
)
from .methods import MethodSpec, parse_method
from .metrics import Qrels, macro_average, ndcg_at_k, spearman, wig
from .ratings import Environment, GameOutcome, Rating, rate, transform_outcome
