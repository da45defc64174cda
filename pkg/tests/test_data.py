from __future__ import annotations

import json
import logging

import numpy as np
import pytest

from acurank.backends import NoisyReranker, Passage
from acurank.data import (
    SyntheticSpec,
    build_tasks,
    check_references,
    generate_synthetic,
    iter_corpus,
    load_corpus,
    load_qrels,
    load_queries,
    load_run,
    read_run_file,
    read_traces,
    write_corpus,
    write_qrels,
    write_queries,
    write_run,
    write_traces,
)
from acurank.engine import SchedulerConfig, run_acurank
from acurank.exceptions import ConfigurationError, DataError
from acurank.metrics import ndcg_at_k


def write(path, text):
    path.write_text(text, encoding="utf-8")
    return path


def test_run_line_parsing(tmp_path):
    run = load_run(write(tmp_path / "r.trec", "q1 Q0 d7 1 21.4 bm25\nq1 Q0 d3 2 19.0 bm25\n"))
    assert run == {"q1": [("d7", 21.4), ("d3", 19.0)]}
    entry = read_run_file(tmp_path / "r.trec").entries[0]
    assert (entry.query_id, entry.doc_id, entry.rank, entry.score, entry.tag) == ("q1", "d7", 1, 21.4, "bm25")


def test_out_of_order_ranks_are_resorted_with_warning(tmp_path, caplog):
    path = write(tmp_path / "r.trec", "q1 Q0 b 2 1.0 t\nq1 Q0 a 1 2.0 t\n")
    with caplog.at_level(logging.WARNING):
        run = load_run(path)
    assert run["q1"] == [("a", 2.0), ("b", 1.0)]
    assert "re-sorted" in caplog.text


@pytest.mark.parametrize(
    "text,line",
    [
        ("q1 Q0 d1 1 2.0 t\nq1 Q0 d2 2 1.0\n", 2),
        ("q1 Q0 d1 one 2.0 t\n", 1),
        ("q1 Q0 d1 1 nan t\n", 1),
        ("q1 Q0 d1 1 2.0 t\n\nq1 Q0 d1 2 1.0 t\n", 3),
    ],
)
def test_malformed_runs_name_the_line(tmp_path, text, line):
    with pytest.raises(DataError) as info:
        load_run(write(tmp_path / "r.trec", text))
    assert info.value.line == line
    assert f"line {line}" in str(info.value)


def test_run_round_trip(tmp_path):
    original = "q1  Q0 d7 1 21.4 bm25\nq1 Q0 d3 2  19.25 bm25\nq2 Q0 d9 1 -3.5 bm25\n"
    src = write(tmp_path / "a.trec", original)
    out = tmp_path / "b.trec"
    write_run(out, read_run_file(src))
    normalize = lambda text: [line.split() for line in text.splitlines()]
    assert normalize(out.read_text()) == normalize(original)
    write_run(tmp_path / "c.trec", load_run(src), tag="bm25")
    assert normalize((tmp_path / "c.trec").read_text()) == normalize(original)


def test_qrels_round_trip(tmp_path):
    path = write(tmp_path / "q.txt", "q1 0 d1 2\nq1 0 d2 0\nq2 0 d1 -1\n")
    qrels = load_qrels(path)
    assert qrels == {"q1": {"d1": 2, "d2": 0}, "q2": {"d1": 0}}
    write_qrels(tmp_path / "out.txt", qrels)
    assert load_qrels(tmp_path / "out.txt") == qrels
    with pytest.raises(DataError):
        load_qrels(write(tmp_path / "bad.txt", "q1 0 d1\n"))
    with pytest.raises(DataError):
        load_qrels(write(tmp_path / "bad2.txt", "q1 0 d1 high\n"))


def test_corpus_round_trip_and_filtering(tmp_path):
    passages = [Passage("a", "alpha text", title="A"), Passage("b", "beta text")]
    write_corpus(tmp_path / "c.jsonl", passages)
    assert load_corpus(tmp_path / "c.jsonl") == {p.doc_id: p for p in passages}
    assert list(load_corpus(tmp_path / "c.jsonl", only={"b"})) == ["b"]


def test_corpus_accepts_beir_ids(tmp_path):
    path = write(tmp_path / "c.jsonl", json.dumps({"_id": "x1", "title": "", "text": "body"}) + "\n")
    assert next(iter_corpus(path)) == Passage("x1", "body")


@pytest.mark.parametrize(
    "line", ['{"docid": "a", "text": ""}', '{"text": "no id"}', "{not json", '{"docid": "a", "text": 3}']
)
def test_bad_corpus_records(tmp_path, line):
    with pytest.raises(DataError) as info:
        load_corpus(write(tmp_path / "c.jsonl", line + "\n"))
    assert info.value.line == 1


def test_duplicate_corpus_ids(tmp_path):
    text = '{"docid": "a", "text": "x"}\n{"docid": "a", "text": "y"}\n'
    with pytest.raises(DataError):
        load_corpus(write(tmp_path / "c.jsonl", text))


def test_queries_tsv_and_jsonl(tmp_path):
    write_queries(tmp_path / "q.tsv", {"1": "what is up", "2": "tab\tinside"})
    assert load_queries(tmp_path / "q.tsv") == {"1": "what is up", "2": "tab\tinside"}
    path = write(tmp_path / "q.jsonl", '{"_id": "7", "text": "hello"}\n{"qid": "8", "query": "bye"}\n')
    assert load_queries(path) == {"7": "hello", "8": "bye"}
    with pytest.raises(DataError):
        load_queries(write(tmp_path / "bad.tsv", "only-id\n"))


def test_referential_integrity_lists_missing_ids():
    run = {"q": [("a", 2.0), ("zz", 1.0), ("yy", 0.5)]}
    with pytest.raises(DataError) as info:
        check_references(run, {"a": Passage("a", "x")})
    assert "yy" in str(info.value) and "zz" in str(info.value)
    with pytest.raises(DataError):
        check_references({"q": [("a", 1.0)]}, {"a": Passage("a", "x")}, queries={})


def test_build_tasks_attaches_grades_and_passes_short_queries_through():
    corpus = {d: Passage(d, f"text {d}") for d in "abc"}
    run = {"q2": [("a", 3.0)], "q1": [("b", 2.0), ("c", 1.0), ("a", 0.5)]}
    tasks = build_tasks(run, corpus, {"q1": "x", "q2": "y"}, {"q1": {"c": 2}}, top_n=2)
    assert [t.query_id for t in tasks] == ["q1", "q2"]
    assert tasks[0].doc_ids == ["b", "c"]
    assert tasks[0].passages["c"].true_relevance == 2
    assert tasks[0].passages["b"].true_relevance == 0
    assert tasks[1].passages["a"].true_relevance == 0
    assert len(tasks[1]) == 1


def test_trace_round_trip(tmp_path):
    dataset = generate_synthetic(SyntheticSpec(n_queries=3, n_docs_per_query=30))
    traces = [run_acurank(t, SchedulerConfig(max_calls=3), NoisyReranker(1.0))[1] for t in dataset.tasks()]
    write_traces(tmp_path / "t.jsonl", traces)
    assert read_traces(tmp_path / "t.jsonl") == traces
    with pytest.raises(DataError):
        read_traces(write(tmp_path / "bad.jsonl", "{oops\n"))


def test_synthetic_spec_validation():
    for bad in (
        {"grade_distribution": (0.5, 0.5, 0.5, 0.0)},
        {"grade_distribution": (1.2, -0.2, 0.0, 0.0)},
        {"temperature_range": (2.0, 1.0)},
        {"temperature_range": (0.0, 1.0)},
        {"score_noise": -1.0},
        {"n_queries": 0},
    ):
        with pytest.raises(ConfigurationError):
            SyntheticSpec(**bad)
    with pytest.raises(ConfigurationError):
        SyntheticSpec.from_mapping({"n_query": 3})


def test_synthetic_is_deterministic():
    spec = SyntheticSpec(n_queries=20, n_docs_per_query=40, seed=5)
    a, b = generate_synthetic(spec), generate_synthetic(spec)
    assert a == b
    assert generate_synthetic(SyntheticSpec(n_queries=20, n_docs_per_query=40, seed=6)) != a


def test_queries_are_seeded_by_their_own_id():
    # same width of query id, different count: the shared queries agree
    small = generate_synthetic(SyntheticSpec(n_queries=20, seed=1))
    large = generate_synthetic(SyntheticSpec(n_queries=90, seed=1))
    for i in range(20):
        assert large.runs[f"q{i:02d}"] == small.runs[f"q{i:02d}"]


def test_synthetic_structure():
    ds = generate_synthetic(SyntheticSpec(n_queries=5, n_docs_per_query=50, temperature_range=(0.5, 2.0)))
    for qid, rows in ds.runs.items():
        scores = [s for _, s in rows]
        assert scores == sorted(scores, reverse=True) and len(rows) == 50
        assert 0.5 <= ds.temperatures[qid] <= 2.0
        assert ds.qrels[qid] == ds.grades[qid]
        assert all(ds.corpus[d].true_relevance == g for d, g in ds.grades[qid].items())


def test_noiseless_run_is_ideal():
    ds = generate_synthetic(SyntheticSpec(n_queries=20, score_noise=0.0))
    for qid, rows in ds.runs.items():
        assert ndcg_at_k([d for d, _ in rows], ds.qrels, qid) == pytest.approx(1.0)


def test_positive_count_concentrates():
    # 10% positives over 100 documents: mean count over 1000 queries within
    # three standard errors of 10
    ds = generate_synthetic(SyntheticSpec(n_queries=1000, grade_distribution=(0.9, 0.05, 0.03, 0.02), seed=2))
    counts = np.array([sum(g > 0 for g in grades.values()) for grades in ds.grades.values()])
    standard_error = np.sqrt(100 * 0.1 * 0.9) / np.sqrt(1000)
    assert abs(counts.mean() - 10) <= 3 * standard_error


def test_synthetic_pipeline_is_bit_reproducible():
    def pipeline():
        ds = generate_synthetic(SyntheticSpec(n_queries=8, n_docs_per_query=60, seed=3))
        out = []
        for task in ds.tasks():
            ranking, trace = run_acurank(task, SchedulerConfig(), NoisyReranker(ds.temperatures[task.query_id], seed=3))
            out.append((ranking, trace.to_json(), ndcg_at_k(ranking, ds.qrels, task.query_id)))
        return out

    assert pipeline() == pipeline()
