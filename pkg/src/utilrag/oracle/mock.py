"""Deterministic stand-in for an LLM.

Scoring rule (total log-probability of the answer):

==========================================================  =======
context holds every token of some gold answer               -1.0
no context, question is in the parametric-answer map        -0.5
no context (empty-string sentinel / w/o-document prompt)    -3.0
anything else                                               -5.0
==========================================================  =======

The total is spread evenly over the continuation's tokens.

Generation rule: for a QA prompt, emit the first gold answer whose tokens all
appear in the Info section; otherwise the parametric answer for the question;
otherwise ``"unknown"``. For a summary instruction, emit the first sentence
of the Docs that holds a whole gold answer, else the first that holds any
gold token, else the empty string.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Mapping

from ..metrics import answer_tokens, exact_match, normalize_answer
from ..prompts import parse_prompt
from ..textcore import split_sentences, tokenize
from .base import GenRequest, ScoreRequest, ScoreResponse

LOGPROB_HIT = -1.0
LOGPROB_KNOWN_NO_CONTEXT = -0.5
LOGPROB_NO_CONTEXT = -3.0
LOGPROB_MISS = -5.0

UNKNOWN = "unknown"


def load_parametric_answers(path: str | Path) -> dict[str, str]:
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    if not isinstance(data, dict) or not all(isinstance(k, str) and isinstance(v, str) for k, v in data.items()):
        raise ValueError(f"{path}: expected a JSON object mapping question -> answer")
    return data


class MockOracle:
    def __init__(self, parametric_answers: Mapping[str, str] | None = None):
        self._known = {normalize_answer(q): a for q, a in (parametric_answers or {}).items()}
        self.identity = "mock:v1"

    def parametric_answer(self, question: str | None) -> str | None:
        if question is None:
            return None
        return self._known.get(normalize_answer(question))

    @staticmethod
    def _golds(req_metadata: dict, fallback: str) -> list[str]:
        golds = req_metadata.get("gold_answers")
        if golds:
            return list(golds)
        return [fallback] if fallback else []

    @staticmethod
    def _covered(context: str, golds: list[str]) -> str | None:
        ctx = set(answer_tokens(context))
        for gold in golds:
            toks = answer_tokens(gold)
            if toks and all(t in ctx for t in toks):
                return gold
        return None

    def _question(self, req_metadata: dict, parsed: dict) -> str | None:
        return req_metadata.get("question") or parsed.get("question")

    def score_continuation(self, req: ScoreRequest) -> ScoreResponse:
        parsed = parse_prompt(req.prompt)
        golds = self._golds(req.metadata, req.continuation)
        context = parsed["context"]
        if context is None:
            known = self.parametric_answer(self._question(req.metadata, parsed))
            if known is not None and golds and exact_match(known, golds):
                total = LOGPROB_KNOWN_NO_CONTEXT
            else:
                total = LOGPROB_NO_CONTEXT
        elif self._covered(context, golds) is not None:
            total = LOGPROB_HIT
        else:
            total = LOGPROB_MISS
        n = max(1, len(tokenize(req.continuation)))
        return ScoreResponse(tuple([total / n] * n), total)

    def generate(self, req: GenRequest) -> str:
        parsed = parse_prompt(req.prompt)
        golds = self._golds(req.metadata, "")
        if parsed["kind"] == "summary":
            return self._teacher_summary(parsed["context"] or "", golds)
        hit = self._covered(parsed["context"] or "", golds)
        if hit is not None:
            text = hit
        else:
            text = self.parametric_answer(self._question(req.metadata, parsed)) or UNKNOWN
        words = text.split()
        return " ".join(words[: req.max_tokens])

    def _teacher_summary(self, docs: str, golds: list[str]) -> str:
        # each line is "title  text"; the title is not part of any sentence
        pieces = [part for line in docs.split("\n") for part in line.split("  ")]
        sentences = [s for piece in pieces for s in split_sentences(piece)]
        for s in sentences:
            if self._covered(s, golds) is not None:
                return s
        gold_toks = {t for g in golds for t in answer_tokens(g)}
        for s in sentences:
            if gold_toks.intersection(answer_tokens(s)):
                return s
        return ""
