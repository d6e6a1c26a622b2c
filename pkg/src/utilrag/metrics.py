"""Answer normalization, containment EM and token F1."""

from __future__ import annotations

import re
import string
import unicodedata
from collections import Counter
from typing import Sequence

from .errors import EmptyGolds

_ARTICLES = re.compile(r"\b(a|an|the)\b")
_ASCII_PUNCT = frozenset(string.punctuation)


def _is_punct(ch: str) -> bool:
    return ch in _ASCII_PUNCT or unicodedata.category(ch).startswith("P")


def normalize_answer(text: str) -> str:
    """Lowercase, drop punctuation, drop articles, collapse whitespace.

    Punctuation goes before articles so that the result is idempotent
    ("t.h.e" would otherwise survive the first pass as "the").
    """
    text = text.lower()
    text = "".join(" " if ch.isspace() else ch for ch in text if not _is_punct(ch))
    text = _ARTICLES.sub(" ", text)
    return " ".join(text.split())


def answer_tokens(text: str) -> list[str]:
    return normalize_answer(text).split()


def _check_golds(golds: Sequence[str]) -> None:
    if isinstance(golds, str):
        raise TypeError("golds must be a sequence of strings, not a string")
    if not golds:
        raise EmptyGolds("at least one gold answer is required")


def exact_match(prediction: str, golds: Sequence[str]) -> int:
    """1 if any normalized gold occurs inside the normalized prediction."""
    _check_golds(golds)
    pred = normalize_answer(prediction)
    for gold in golds:
        g = normalize_answer(gold)
        if (g and g in pred) or (not g and not pred):
            return 1
    return 0


def _f1(pred_tokens: list[str], gold_tokens: list[str]) -> float:
    if not pred_tokens and not gold_tokens:
        return 1.0
    if not pred_tokens or not gold_tokens:
        return 0.0
    overlap = sum((Counter(pred_tokens) & Counter(gold_tokens)).values())
    if overlap == 0:
        return 0.0
    precision = overlap / len(pred_tokens)
    recall = overlap / len(gold_tokens)
    return 2 * precision * recall / (precision + recall)


def token_f1(prediction: str, golds: Sequence[str]) -> float:
    """Best token-multiset F1 over the gold answers."""
    _check_golds(golds)
    pred = answer_tokens(prediction)
    return max(_f1(pred, answer_tokens(g)) for g in golds)
