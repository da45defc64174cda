"""Reading and writing corpora, TREC runs, qrels and traces; synthetic data.

File formats:

* corpus: JSON lines ``{"docid": ..., "title": ..., "text": ...}`` (``_id``
  is accepted for ``docid`` to read BEIR corpora directly)
* queries: TSV ``qid<TAB>text`` or JSON lines ``{"qid"|"_id", "text"|"query"}``
* run: whitespace separated ``qid Q0 docid rank score tag``
* qrels: whitespace separated ``qid 0 docid grade``
* traces: JSON lines, one :class:`~acurank.engine.RunTrace` per line
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Mapping, NamedTuple, Optional, Sequence

import numpy as np

from .backends import Passage
from .engine import QueryTask, RunTrace
from .exceptions import ConfigurationError, DataError
from .metrics import Qrels
from .seeding import derive_rng

__all__ = [
    "RunEntry",
    "RunFile",
    "read_run_file",
    "load_run",
    "write_run",
    "load_qrels",
    "write_qrels",
    "iter_corpus",
    "load_corpus",
    "write_corpus",
    "load_queries",
    "write_queries",
    "check_references",
    "build_tasks",
    "write_traces",
    "read_traces",
    "SyntheticSpec",
    "SyntheticDataset",
    "generate_synthetic",
]

logger = logging.getLogger(__name__)


class RunEntry(NamedTuple):
    query_id: str
    doc_id: str
    rank: int
    score: float
    tag: str


@dataclass
class RunFile:
    entries: list = field(default_factory=list)

    def by_query(self) -> dict[str, list[tuple[str, float]]]:
        out: dict[str, list[tuple[str, float]]] = {}
        for entry in self.entries:
            out.setdefault(entry.query_id, []).append((entry.doc_id, entry.score))
        return out


def read_run_file(path) -> RunFile:
    """Parse a TREC run; entries come back grouped by query and sorted by rank."""
    per_query: dict[str, list[RunEntry]] = {}
    seen = set()
    with open(path, encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            parts = line.split()
            if len(parts) != 6:
                raise DataError(f"expected 6 fields (qid Q0 docid rank score tag), got {len(parts)}", line=lineno)
            qid, _, docid, rank, score, tag = parts
            try:
                entry = RunEntry(qid, docid, int(rank), float(score), tag)
            except ValueError as exc:
                raise DataError(f"bad rank or score: {exc}", line=lineno) from None
            if not math.isfinite(entry.score):
                raise DataError("score is not finite", line=lineno)
            if (qid, docid) in seen:
                raise DataError(f"duplicate entry for query {qid}, doc {docid}", line=lineno)
            seen.add((qid, docid))
            per_query.setdefault(qid, []).append(entry)
    entries = []
    for qid, rows in per_query.items():
        ordered = sorted(rows, key=lambda e: e.rank)
        if ordered != rows:
            logger.warning("run %s: ranks for query %s were out of order; re-sorted", path, qid)
        entries.extend(ordered)
    return RunFile(entries)


def load_run(path) -> dict[str, list[tuple[str, float]]]:
    """``query_id -> [(doc_id, score), ...]`` in rank order."""
    return read_run_file(path).by_query()


def write_run(path, run, tag: str = "acurank") -> None:
    """Write a :class:`RunFile` or a ``query_id -> [(doc_id, score)]`` mapping."""
    if isinstance(run, RunFile):
        entries = run.entries
    else:
        entries = [
            RunEntry(qid, doc_id, rank, score, tag)
            for qid, rows in run.items()
            for rank, (doc_id, score) in enumerate(rows, start=1)
        ]
    with open(path, "w", encoding="utf-8") as handle:
        for e in entries:
            handle.write(f"{e.query_id} Q0 {e.doc_id} {e.rank} {e.score!r} {e.tag}\n")


def ranking_to_run(ranking: Sequence[str]) -> list[tuple[str, float]]:
    """Attach strictly decreasing scores to a ranked list of doc ids."""
    n = len(ranking)
    return [(doc_id, float(n - i)) for i, doc_id in enumerate(ranking)]


def load_qrels(path) -> Qrels:
    triples = []
    with open(path, encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            parts = line.split()
            if len(parts) != 4:
                raise DataError(f"expected 4 fields (qid 0 docid grade), got {len(parts)}", line=lineno)
            qid, _, docid, grade = parts
            try:
                grade = int(grade)
            except ValueError:
                raise DataError(f"grade {grade!r} is not an integer", line=lineno) from None
            if grade < 0:
                # some collections mark judged-nonrelevant as -1
                grade = 0
            triples.append((qid, docid, grade))
    return Qrels.from_triples(triples)


def write_qrels(path, qrels: Mapping) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        for qid, judged in qrels.items():
            for docid, grade in judged.items():
                handle.write(f"{qid} 0 {docid} {grade}\n")


def iter_corpus(path) -> Iterator[Passage]:
    """Stream passages from a JSON-lines corpus."""
    with open(path, encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"invalid JSON: {exc.msg}", line=lineno) from None
            docid = obj.get("docid", obj.get("_id"))
            text = obj.get("text")
            if not docid or not isinstance(text, str) or not text.strip():
                raise DataError("corpus records need a docid and non-empty text", line=lineno)
            yield Passage(doc_id=str(docid), text=text, title=obj.get("title") or None)


def load_corpus(path, only: Optional[set] = None) -> dict[str, Passage]:
    """Load a corpus, optionally keeping only the ids in ``only``."""
    corpus = {}
    for passage in iter_corpus(path):
        if only is not None and passage.doc_id not in only:
            continue
        if passage.doc_id in corpus:
            raise DataError(f"duplicate docid {passage.doc_id} in corpus")
        corpus[passage.doc_id] = passage
    return corpus


def write_corpus(path, passages: Iterable[Passage]) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        for p in passages:
            record = {"docid": p.doc_id, "text": p.text}
            if p.title:
                record["title"] = p.title
            handle.write(json.dumps(record, ensure_ascii=False) + "\n")


def load_queries(path) -> dict[str, str]:
    path = Path(path)
    queries = {}
    with open(path, encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            if path.suffix in (".jsonl", ".json"):
                try:
                    obj = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise DataError(f"invalid JSON: {exc.msg}", line=lineno) from None
                qid = obj.get("qid", obj.get("_id"))
                text = obj.get("text", obj.get("query"))
            else:
                qid, _, text = line.rstrip("\n").partition("\t")
            if not qid or not text:
                raise DataError("query records need an id and text", line=lineno)
            queries[str(qid)] = text
    return queries


def write_queries(path, queries: Mapping[str, str]) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        for qid, text in queries.items():
            handle.write(f"{qid}\t{text}\n")


def check_references(run: Mapping[str, Sequence], corpus: Mapping[str, Passage], queries=None) -> None:
    """Fail with the missing ids if the run names unknown documents or queries."""
    missing = sorted({doc_id for rows in run.values() for doc_id, _ in rows if doc_id not in corpus})
    if missing:
        shown = ", ".join(missing[:20]) + (" ..." if len(missing) > 20 else "")
        raise DataError(f"{len(missing)} run documents missing from corpus: {shown}")
    if queries is not None:
        absent = sorted(set(run) - set(queries))
        if absent:
            raise DataError(f"queries missing for run topics: {', '.join(absent[:20])}")


def build_tasks(run, corpus, queries, qrels=None, top_n: Optional[int] = None) -> list[QueryTask]:
    """Assemble one :class:`QueryTask` per query, ordered by query id.

    Judged grades from ``qrels`` are attached as ``true_relevance`` (0 for
    unjudged documents) so simulated backends can run on real data.
    Queries with fewer than ``top_n`` candidates pass through as they are.
    """
    check_references(run, corpus, queries)
    tasks = []
    for qid in sorted(run):
        rows = run[qid][:top_n] if top_n else run[qid]
        rows = sorted(rows, key=lambda r: -r[1])
        judged = qrels.get(qid, {}) if qrels is not None else None
        passages = {}
        for doc_id, _ in rows:
            p = corpus[doc_id]
            grade = judged.get(doc_id, 0) if judged is not None else None
            passages[doc_id] = Passage(doc_id=doc_id, text=p.text, title=p.title, true_relevance=grade)
        tasks.append(QueryTask(query_id=qid, query=queries[qid], candidates=tuple(rows), passages=passages))
    return tasks


def write_traces(path, traces: Iterable[RunTrace], mode: str = "w") -> None:
    with open(path, mode, encoding="utf-8") as handle:
        for trace in traces:
            handle.write(trace.to_json() + "\n")


def read_traces(path) -> list[RunTrace]:
    traces = []
    with open(path, encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            if line.strip():
                try:
                    traces.append(RunTrace.from_dict(json.loads(line)))
                except (json.JSONDecodeError, TypeError) as exc:
                    raise DataError(f"invalid trace record: {exc}", line=lineno) from None
    return traces


@dataclass(frozen=True)
class SyntheticSpec:
    """Parameters of a synthetic reranking benchmark.

    Every document gets a grade in 0..3 drawn from ``grade_distribution``;
    its retrieval score is ``score_offset + grade + N(0, score_noise)``.
    Each query also gets a reranker noise temperature drawn uniformly from
    ``temperature_range``.
    """

    n_queries: int = 200
    n_docs_per_query: int = 100
    grade_distribution: tuple = (0.7, 0.15, 0.1, 0.05)
    score_noise: float = 1.0
    temperature_range: tuple = (0.5, 2.0)
    seed: int = 0
    score_offset: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "grade_distribution", tuple(float(p) for p in self.grade_distribution))
        object.__setattr__(self, "temperature_range", tuple(float(t) for t in self.temperature_range))
        probs = self.grade_distribution
        if self.n_queries < 1 or self.n_docs_per_query < 1:
            raise ConfigurationError("need at least one query and one document per query")
        if any(p < 0 for p in probs) or not math.isclose(sum(probs), 1.0, abs_tol=1e-9):
            raise ConfigurationError(f"grade probabilities must be non-negative and sum to 1, got {probs}")
        if self.score_noise < 0:
            raise ConfigurationError("score_noise must be >= 0")
        lo, hi = self.temperature_range
        if not 0 < lo <= hi:
            raise ConfigurationError(f"temperature range must satisfy 0 < lo <= hi, got {self.temperature_range}")

    @classmethod
    def from_mapping(cls, values: Mapping) -> "SyntheticSpec":
        known = set(cls.__dataclass_fields__)
        unknown = set(values) - known
        if unknown:
            raise ConfigurationError(f"unknown synthetic settings: {sorted(unknown)}")
        return cls(**values)


@dataclass
class SyntheticDataset:
    corpus: dict
    queries: dict
    runs: dict
    qrels: Qrels
    grades: dict
    temperatures: dict

    def tasks(self) -> list[QueryTask]:
        return build_tasks(self.runs, self.corpus, self.queries, self.qrels)


def generate_synthetic(spec: SyntheticSpec) -> SyntheticDataset:
    """Draw a synthetic benchmark; each query has its own derived RNG."""
    corpus, queries, runs, grades, temperatures = {}, {}, {}, {}, {}
    qrels = Qrels()
    width = len(str(spec.n_queries - 1))
    lo, hi = spec.temperature_range
    for q in range(spec.n_queries):
        qid = f"q{q:0{width}d}"
        rng = derive_rng(spec.seed, qid)
        g = rng.choice(len(spec.grade_distribution), size=spec.n_docs_per_query, p=spec.grade_distribution)
        noise = rng.normal(0.0, spec.score_noise, size=spec.n_docs_per_query) if spec.score_noise > 0 else 0.0
        scores = spec.score_offset + g + noise
        temperatures[qid] = float(rng.uniform(lo, hi))
        order = np.argsort(-scores, kind="stable")
        doc_ids = [f"{qid}-d{i:03d}" for i in range(spec.n_docs_per_query)]
        queries[qid] = f"synthetic query {qid}"
        runs[qid] = [(doc_ids[i], float(scores[i])) for i in order]
        grades[qid] = {doc_ids[i]: int(g[i]) for i in range(spec.n_docs_per_query)}
        qrels[qid] = dict(grades[qid])
        for i, doc_id in enumerate(doc_ids):
            corpus[doc_id] = Passage(doc_id=doc_id, text=f"synthetic passage {doc_id}", true_relevance=int(g[i]))
    return SyntheticDataset(corpus, queries, runs, qrels, grades, temperatures)
