"""Listwise ranking prompt construction and response parsing.

The template follows the RankLLM/RankZephyr numbered-identifier format:
passages are listed as ``[1] Title: ... Content: ...`` and the model answers
``[3] > [1] > [2] ...``.
"""

from __future__ import annotations

import re
from typing import Sequence

__all__ = [
    "SYSTEM_MESSAGE",
    "build_user_message",
    "build_messages",
    "parse_ranking",
    "repair_permutation",
    "truncate_text",
]

SYSTEM_MESSAGE = (
    "You are RankLLM, an intelligent assistant that can rank passages based on their relevancy to the query."
)
_PREFIX = (
    "I will provide you with {num} passages, each indicated by a numerical identifier []. "
    "Rank the passages based on their relevance to the search query: {query}.\n\n"
)
_SUFFIX = (
    "Search Query: {query}.\n"
    "Rank the {num} passages above based on their relevance to the search query. "
    "All the passages should be included and listed using identifiers, in descending order of relevance. "
    "The output format should be [] > [], e.g., [2] > [1]. "
    "Only respond with the ranking results; do not say any word or explain."
)

# roughly 300 words of English text
DEFAULT_MAX_PASSAGE_CHARS = 1800

_IDENTIFIER = re.compile(r"\[(\d+)\]")
_CLEAN_RESPONSE = re.compile(r"\s*\[\d+\](?:\s*>\s*\[\d+\])*\s*")
_WHITESPACE = re.compile(r"\s+")


def truncate_text(text: str, max_chars: int) -> str:
    """Collapse whitespace and cut at a word boundary within ``max_chars``."""
    text = _WHITESPACE.sub(" ", text).strip()
    if len(text) <= max_chars:
        return text
    cut = text[:max_chars]
    space = cut.rfind(" ")
    return cut[:space] if space > 0 else cut


def build_user_message(query: str, passages: Sequence, max_chars: int = DEFAULT_MAX_PASSAGE_CHARS) -> str:
    query = _WHITESPACE.sub(" ", query).strip()
    num = len(passages)
    lines = [_PREFIX.format(num=num, query=query)]
    for i, passage in enumerate(passages, start=1):
        text = truncate_text(passage.text, max_chars)
        title = _WHITESPACE.sub(" ", passage.title or "").strip()
        if title:
            lines.append(f"[{i}] Title: {title}\nContent: {text}\n")
        else:
            lines.append(f"[{i}] {text}\n")
    lines.append("\n")
    lines.append(_SUFFIX.format(num=num, query=query))
    return "".join(lines)


def build_messages(query: str, passages: Sequence, max_chars: int = DEFAULT_MAX_PASSAGE_CHARS) -> list[dict]:
    """Chat-completions message list for one listwise ranking call."""
    return [
        {"role": "system", "content": SYSTEM_MESSAGE},
        {"role": "user", "content": build_user_message(query, passages, max_chars)},
    ]


def repair_permutation(parsed: Sequence[int], n: int) -> list[int]:
    """Force a list of 1-based identifiers into a permutation of 1..n.

    Keeps the first occurrence of every in-range identifier, drops
    duplicates and out-of-range values, then appends missing identifiers in
    ascending (original input) order.
    """
    seen = set()
    out = []
    for idx in parsed:
        if 1 <= idx <= n and idx not in seen:
            seen.add(idx)
            out.append(idx)
    out.extend(i for i in range(1, n + 1) if i not in seen)
    return out


def parse_ranking(text: str, n: int) -> tuple[list[int], bool, int]:
    """Parse a ``[i] > [j] > ...`` response.

    Returns ``(permutation, repaired, n_found)`` where ``n_found`` is the
    number of bracketed identifiers seen at all.  ``repaired`` is False only
    when the response is exactly a clean chain covering every identifier once.
    """
    found = [int(m) for m in _IDENTIFIER.findall(text)]
    permutation = repair_permutation(found, n)
    clean = _CLEAN_RESPONSE.fullmatch(text) is not None and found == permutation
    return permutation, not clean, len(found)
