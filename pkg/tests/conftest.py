from __future__ import annotations

import numpy as np
import pytest

from acurank.backends import Passage
from acurank.engine import QueryTask


def make_task(grades, scores=None, query_id="q", query="test query"):
    """A task whose candidates are sorted by ``scores`` (default: by grade)."""
    grades = list(grades)
    if scores is None:
        scores = [float(g) + 1.0 for g in grades]
    ids = [f"d{i:03d}" for i in range(len(grades))]
    order = sorted(range(len(grades)), key=lambda i: -scores[i])
    passages = {
        ids[i]: Passage(doc_id=ids[i], text=f"passage {ids[i]}", true_relevance=int(grades[i])) for i in range(len(grades))
    }
    return QueryTask(
        query_id=query_id,
        query=query,
        candidates=tuple((ids[i], float(scores[i])) for i in order),
        passages=passages,
    )


def distinct_grade_task(n, seed, score_noise=2.0, query_id="q"):
    """``n`` documents with grades 0..n-1 in random order and noisy positive scores."""
    rng = np.random.default_rng(seed)
    grades = rng.permutation(n)
    scores = 10.0 + grades / 3.0 + rng.normal(0.0, score_noise, n)
    return make_task(grades, scores.tolist(), query_id=query_id)


@pytest.fixture
def task_factory():
    return make_task


# one line per acceptance criterion, printed at the end of the session
ACCEPTANCE_LINES: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[number])
