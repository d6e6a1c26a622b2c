"""Task-adaptive summarization: corpora builders, an extractive stand-in
for a fine-tuned summarizer, and the alignment losses.

No model weights are trained here. The alignment objective (a Bernoulli
cross-entropy over DPO-style implicit rewards) and its gradient are exposed
for whatever harness updates the summarizer policy.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Protocol, Sequence

from .errors import (
    EmptyDocs,
    EmptyOriginal,
    InputError,
    LengthMismatch,
    NonPositiveBeta,
    OracleError,
)
from .metrics import exact_match
from .oracle import GenRequest, Oracle
from .prompts import render_qa, render_summary
from .records import Document, Query, read_jsonl, write_jsonl
from .textcore import split_sentences, tokenize

log = logging.getLogger(__name__)

DEFAULT_BETA = 0.1
MIN_SUMMARY_CHARS = 32


@dataclass(frozen=True)
class SummaryInstruction:
    rendered_text: str
    query_id: str
    doc_ids: tuple[str, ...]


@dataclass(frozen=True)
class InstructionSummaryPair:
    instruction: SummaryInstruction
    summary: str

    def __post_init__(self) -> None:
        if not self.summary:
            raise InputError("summary must be non-empty")

    def to_json(self) -> dict:
        return {
            "query_id": self.instruction.query_id,
            "instruction": self.instruction.rendered_text,
            "summary": self.summary,
            "doc_ids": list(self.instruction.doc_ids),
        }

    @classmethod
    def from_json(cls, obj: dict) -> InstructionSummaryPair:
        instr = SummaryInstruction(obj["instruction"], obj["query_id"], tuple(obj.get("doc_ids", ())))
        return cls(instr, obj["summary"])


@dataclass(frozen=True)
class AlignmentTriple:
    prompt: str
    response: str
    label: int
    query_id: str = ""

    def __post_init__(self) -> None:
        if self.label not in (0, 1):
            raise InputError(f"label must be 0 or 1, got {self.label!r}")

    def to_json(self) -> dict:
        return {"query_id": self.query_id, "prompt": self.prompt, "response": self.response, "label": self.label}

    @classmethod
    def from_json(cls, obj: dict) -> AlignmentTriple:
        return cls(obj["prompt"], obj["response"], int(obj["label"]), obj.get("query_id", ""))


@dataclass(frozen=True)
class PolicyLogProbs:
    logp_policy: float
    logp_sft: float

    def __post_init__(self) -> None:
        if self.logp_policy > 0 or self.logp_sft > 0:
            raise InputError("log-probabilities must be <= 0")


class AdmitsDocuments(Protocol):
    def admitted_docs(self, query: Query) -> list[Document]: ...


# -- instructions and corpora -----------------------------------------------


def render_summary_instruction(query: Query, docs: Sequence[Document]) -> SummaryInstruction:
    if not docs:
        raise EmptyDocs("summary instruction needs at least one document")
    return SummaryInstruction(render_summary(query.text, docs), query.id, tuple(d.id for d in docs))


def _gold_metadata(query: Query) -> dict:
    return {"gold_answers": list(query.gold_answers), "question": query.text}


def build_distillation_corpus(
    queries: Sequence[Query],
    pipeline: AdmitsDocuments,
    teacher: Oracle,
    *,
    max_tokens: int = 256,
    seed: int = 0,
) -> list[InstructionSummaryPair]:
    """One instruction/summary pair per query whose teacher call succeeds."""
    pairs = []
    for q in queries:
        docs = pipeline.admitted_docs(q)
        if not docs:
            log.info("query %s: no admitted documents, skipped", q.id)
            continue
        instr = render_summary_instruction(q, docs)
        try:
            summary = teacher.generate(GenRequest(instr.rendered_text, max_tokens, seed, _gold_metadata(q)))
        except OracleError as exc:
            log.warning("query %s: teacher failed (%s), skipped", q.id, exc)
            continue
        summary = summary.strip()
        if not summary:
            log.warning("query %s: teacher returned an empty summary, skipped", q.id)
            continue
        pairs.append(InstructionSummaryPair(instr, summary))
    return pairs


def build_alignment_corpus(
    queries: Sequence[Query],
    summarizer: Callable[[Query], str],
    answer_oracle: Oracle,
    metric: Callable[[str, Sequence[str]], int] = exact_match,
    *,
    max_tokens: int = 16,
    seed: int = 0,
) -> list[AlignmentTriple]:
    """Prompt over the summary, the oracle's answer, and its correctness label."""
    triples = []
    for q in queries:
        try:
            summary = summarizer(q)
            prompt = render_qa(q.text, summary)
            response = answer_oracle.generate(GenRequest(prompt, max_tokens, seed, _gold_metadata(q))).rstrip()
        except OracleError as exc:
            log.warning("query %s: answer oracle failed (%s), skipped", q.id, exc)
            continue
        triples.append(AlignmentTriple(prompt, response, int(metric(response, q.gold_answers)), q.id))
    return triples


def save_distillation_corpus(path: str | Path, pairs: Iterable[InstructionSummaryPair], meta: dict | None = None) -> None:
    write_jsonl(path, (p.to_json() for p in pairs), meta)


def load_distillation_corpus(path: str | Path) -> list[InstructionSummaryPair]:
    return [InstructionSummaryPair.from_json(o) for o in read_jsonl(path)]


def save_alignment_corpus(path: str | Path, triples: Iterable[AlignmentTriple], meta: dict | None = None) -> None:
    write_jsonl(path, (t.to_json() for t in triples), meta)


def load_alignment_corpus(path: str | Path) -> list[AlignmentTriple]:
    return [AlignmentTriple.from_json(o) for o in read_jsonl(path)]


# -- extractive summarizer --------------------------------------------------


def extractive_summarize(query: Query, docs: Sequence[Document], max_chars: int = 200) -> str:
    """Greedy query-overlap sentence selection under a character budget.

    Sentences are ranked by the fraction of distinct query tokens they
    contain (ties: earlier document, then earlier sentence). Sentences with
    no overlap are never chosen; a sentence that does not fit is skipped.
    The chosen sentences are emitted in their original order, space-joined.
    """
    if max_chars < MIN_SUMMARY_CHARS:
        raise InputError(f"max_chars must be >= {MIN_SUMMARY_CHARS}")
    q_tokens = set(tokenize(query.text))
    if not q_tokens:
        return ""
    candidates = []
    for di, doc in enumerate(docs):
        for si, sent in enumerate(split_sentences(doc.text)):
            overlap = len(q_tokens.intersection(tokenize(sent))) / len(q_tokens)
            if overlap > 0:
                candidates.append((-overlap, di, si, sent))
    candidates.sort(key=lambda c: c[:3])
    chosen = []
    used = 0
    for _, di, si, sent in candidates:
        extra = len(sent) + (1 if chosen else 0)
        if used + extra > max_chars:
            continue
        chosen.append((di, si, sent))
        used += extra
    chosen.sort()
    return " ".join(s for _, _, s in chosen)


def compression_ratio(summary: str, originals: Sequence[Document]) -> float:
    """Summary length over the total rendered length of the source documents.

    Clamped to 1.0 for summaries longer than their sources.
    """
    total = sum(len(d.rendered()) for d in originals)
    if not originals or total == 0:
        raise EmptyOriginal("compression ratio needs non-empty originals")
    return min(1.0, len(summary) / total)


# -- alignment losses -------------------------------------------------------


def correctness_prob(r: float) -> float:
    """Logistic sigmoid, evaluated without overflow."""
    if r >= 0:
        return 1.0 / (1.0 + math.exp(-r))
    e = math.exp(r)
    return e / (1.0 + e)


def softplus(x: float) -> float:
    """``ln(1 + e^x)`` without overflow."""
    return max(x, 0.0) + math.log1p(math.exp(-abs(x)))


def reward_bce_loss(rewards: Sequence[float], labels: Sequence[int]) -> float:
    """Summed Bernoulli cross-entropy ``-Z ln s(r) - (1-Z) ln(1-s(r))``.

    Uses ``-ln s(r) = softplus(-r)`` and ``-ln(1-s(r)) = softplus(r)``.
    """
    if len(rewards) != len(labels):
        raise LengthMismatch(f"{len(rewards)} rewards for {len(labels)} labels")
    if not rewards:
        raise LengthMismatch("empty reward list")
    total = 0.0
    for r, z in zip(rewards, labels):
        if z not in (0, 1):
            raise InputError(f"label must be 0 or 1, got {z!r}")
        total += softplus(-r) if z == 1 else softplus(r)
    return total


def dpo_implicit_reward(lp: PolicyLogProbs, beta: float = DEFAULT_BETA) -> float:
    if not beta > 0:
        raise NonPositiveBeta(f"beta must be > 0, got {beta}")
    return beta * (lp.logp_policy - lp.logp_sft)


def _check_alignment_inputs(corpus, logprobs) -> None:
    if not corpus:
        raise InputError("alignment objective over an empty corpus")
    if len(corpus) != len(logprobs):
        raise LengthMismatch(f"{len(logprobs)} log-prob records for {len(corpus)} triples")


def alignment_objective(
    corpus: Sequence[AlignmentTriple], logprobs: Sequence[PolicyLogProbs], beta: float = DEFAULT_BETA
) -> float:
    _check_alignment_inputs(corpus, logprobs)
    rewards = [dpo_implicit_reward(lp, beta) for lp in logprobs]
    return reward_bce_loss(rewards, [t.label for t in corpus])


def alignment_objective_grad(
    corpus: Sequence[AlignmentTriple], logprobs: Sequence[PolicyLogProbs], beta: float = DEFAULT_BETA
) -> list[float]:
    """d objective / d logp_policy per triple: ``beta * (sigmoid(r) - Z)``."""
    _check_alignment_inputs(corpus, logprobs)
    return [
        beta * (correctness_prob(dpo_implicit_reward(lp, beta)) - t.label)
        for t, lp in zip(corpus, logprobs)
    ]
