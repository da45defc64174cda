"""Listwise reranker backends.

Every backend maps a :class:`RerankRequest` (a query plus a small ordered
batch of passages) to a :class:`RerankResult` holding a permutation of the
batch ids, most relevant first.  Three implementations are provided:

* :class:`OracleReranker` sorts by hidden relevance grades.
* :class:`NoisyReranker` samples a Plackett-Luce permutation whose item
  weights are ``exp(grade / temperature)``, emulating an imperfect model.
* :class:`HttpReranker` prompts a chat-completions endpoint.
"""

from __future__ import annotations

import logging
import os
import threading
import time
from abc import ABC, abstractmethod
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Optional

import httpx
import numpy as np

from .exceptions import ConfigurationError, RerankerOutputError, TransportError
from .prompt import DEFAULT_MAX_PASSAGE_CHARS, build_messages, parse_ranking
from .seeding import derive_seed

__all__ = [
    "Passage",
    "RerankRequest",
    "RerankResult",
    "Reranker",
    "OracleReranker",
    "NoisyReranker",
    "HttpReranker",
    "rerank_oracle",
    "rerank_noisy",
    "rerank_http",
]

logger = logging.getLogger(__name__)

DEFAULT_CAPACITY = 20


@dataclass(frozen=True)
class Passage:
    doc_id: str
    text: str
    title: Optional[str] = None
    # simulation only; real backends never look at it
    true_relevance: Optional[int] = None

    def __post_init__(self):
        if not self.doc_id:
            raise ValueError("doc_id must be non-empty")


@dataclass(frozen=True)
class RerankRequest:
    query: str
    passages: tuple
    max_tokens_hint: int = 4096
    capacity: int = DEFAULT_CAPACITY

    def __post_init__(self):
        object.__setattr__(self, "passages", tuple(self.passages))
        n = len(self.passages)
        if not 2 <= n <= self.capacity:
            raise ConfigurationError(f"a rerank request holds 2..{self.capacity} passages, got {n}")
        if len({p.doc_id for p in self.passages}) != n:
            raise ConfigurationError("passage doc_ids must be unique within a request")

    @property
    def doc_ids(self) -> list[str]:
        return [p.doc_id for p in self.passages]


@dataclass(frozen=True)
class RerankResult:
    ordering: tuple
    repaired: bool = False
    raw_response: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "ordering", tuple(self.ordering))


class Reranker(ABC):
    """A listwise reranker g(D')."""

    @abstractmethod
    def rerank(self, request: RerankRequest) -> RerankResult:
        ...

    def __call__(self, request: RerankRequest) -> RerankResult:
        return self.rerank(request)


def _grades(request: RerankRequest) -> np.ndarray:
    missing = [p.doc_id for p in request.passages if p.true_relevance is None]
    if missing:
        raise ConfigurationError(f"simulated rerankers need true_relevance; missing for {missing}")
    return np.array([p.true_relevance for p in request.passages], dtype=float)


def rerank_oracle(request: RerankRequest) -> RerankResult:
    """Sort by true relevance, descending; ties keep input order."""
    grades = _grades(request)
    order = np.argsort(-grades, kind="stable")
    return RerankResult(ordering=tuple(request.passages[i].doc_id for i in order))


def rerank_noisy(request: RerankRequest, temperature: float, seed: int) -> RerankResult:
    """Sample an ordering from Plackett-Luce with weights exp(grade / temperature).

    Uses the Gumbel-max construction: sorting ``log w_i + G_i`` with i.i.d.
    standard Gumbel ``G_i`` yields an exact Plackett-Luce draw.
    """
    if not temperature > 0:
        raise ConfigurationError(f"temperature must be positive, got {temperature!r}")
    grades = _grades(request)
    rng = np.random.default_rng(seed)
    keys = grades / temperature + rng.gumbel(size=len(grades))
    order = np.argsort(-keys, kind="stable")
    return RerankResult(ordering=tuple(request.passages[i].doc_id for i in order))


class OracleReranker(Reranker):
    def rerank(self, request):
        return rerank_oracle(request)


class NoisyReranker(Reranker):
    """Seeded Plackett-Luce reranker.

    Each call draws from a seed derived from the master seed, the request
    contents and how many times that exact request has been seen, so results
    are reproducible regardless of call interleaving across batches.
    """

    def __init__(self, temperature: float, seed: int = 0):
        if not temperature > 0:
            raise ConfigurationError(f"temperature must be positive, got {temperature!r}")
        self.temperature = temperature
        self.seed = seed
        self._seen = Counter()
        self._lock = threading.Lock()

    def rerank(self, request):
        key = (request.query, tuple(request.doc_ids))
        with self._lock:
            occurrence = self._seen[key]
            self._seen[key] += 1
        seed = derive_seed(self.seed, request.query, "\x1e".join(request.doc_ids), occurrence)
        return rerank_noisy(request, self.temperature, seed)


@dataclass
class HttpReranker(Reranker):
    """Chat-completions client speaking the numbered-passage ranking prompt.

    Transport failures (timeouts, connection errors, 5xx and 429) are retried
    ``retries`` times with exponential backoff.  Other non-2xx statuses raise
    a non-retryable :class:`TransportError` immediately.
    """

    endpoint: str
    model: str
    timeout: float = 60.0
    api_key_env: Optional[str] = None
    max_concurrency: int = 4
    retries: int = 2
    backoff: float = 0.5
    max_passage_chars: int = DEFAULT_MAX_PASSAGE_CHARS
    client: Optional[httpx.Client] = None
    sleep: Callable[[float], None] = time.sleep
    _slots: threading.BoundedSemaphore = field(init=False, repr=False)

    def __post_init__(self):
        if self.max_concurrency < 1:
            raise ConfigurationError("max_concurrency must be >= 1")
        self._api_key = None
        if self.api_key_env:
            self._api_key = os.environ.get(self.api_key_env)
            if not self._api_key:
                raise ConfigurationError(f"environment variable {self.api_key_env} is not set")
        if self.client is None:
            self.client = httpx.Client(timeout=self.timeout)
        self._slots = threading.BoundedSemaphore(self.max_concurrency)

    def _passage_budget(self, request):
        # ~4 characters per token, shared evenly across passages
        per_passage = 4 * request.max_tokens_hint // len(request.passages)
        return max(1, min(self.max_passage_chars, per_passage))

    def payload(self, request: RerankRequest) -> dict:
        return {
            "model": self.model,
            "messages": build_messages(request.query, request.passages, self._passage_budget(request)),
            "temperature": 0,
        }

    def _post(self, body):
        headers = {"Authorization": f"Bearer {self._api_key}"} if self._api_key else {}
        try:
            with self._slots:
                response = self.client.post(self.endpoint, json=body, headers=headers, timeout=self.timeout)
        except httpx.TimeoutException as exc:
            raise TransportError(f"request timed out: {exc}") from exc
        except httpx.TransportError as exc:
            raise TransportError(f"transport failure: {exc}") from exc
        if not response.is_success:
            status = response.status_code
            retryable = status >= 500 or status == 429
            raise TransportError(f"HTTP {status} from {self.endpoint}", status=status, retryable=retryable)
        return response

    @staticmethod
    def _extract_text(response) -> str:
        try:
            choice = response.json()["choices"][0]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise RerankerOutputError("response is not a chat-completions payload", raw_response=response.text) from exc
        message = choice.get("message") or {}
        text = message.get("content") if isinstance(message, dict) else None
        if text is None:
            text = choice.get("text")
        if not isinstance(text, str):
            raise RerankerOutputError("no generated text in response", raw_response=response.text)
        return text

    def rerank(self, request):
        body = self.payload(request)
        for attempt in range(self.retries + 1):
            try:
                response = self._post(body)
                break
            except TransportError as exc:
                if not exc.retryable or attempt == self.retries:
                    raise
                delay = self.backoff * 2**attempt
                logger.warning("reranker call failed (%s); retrying in %.2fs", exc, delay)
                self.sleep(delay)
        text = self._extract_text(response)
        n = len(request.passages)
        permutation, repaired, n_found = parse_ranking(text, n)
        if n_found == 0:
            raise RerankerOutputError("no passage identifiers in reranker output", raw_response=text)
        ids = request.doc_ids
        return RerankResult(ordering=tuple(ids[i - 1] for i in permutation), repaired=repaired, raw_response=text)

    def close(self):
        self.client.close()


def rerank_http(request: RerankRequest, endpoint: str, model: str, timeout: float = 60.0, **kwargs) -> RerankResult:
    """One-shot convenience wrapper around :class:`HttpReranker`."""
    owns_client = kwargs.get("client") is None
    reranker = HttpReranker(endpoint=endpoint, model=model, timeout=timeout, **kwargs)
    try:
        return reranker.rerank(request)
    finally:
        if owns_client:
            reranker.close()
