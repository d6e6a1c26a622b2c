"""Knowledge-augmented answering and EM/F1 evaluation over a dataset."""

from __future__ import annotations

import csv
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

from .errors import EmptyDataset, OracleError, OracleFailure
from .metrics import exact_match, normalize_answer, token_f1
from .oracle import GenRequest, Oracle, request_hash
from .pipeline import Knowledge, KnowledgeKind, Pipeline
from .prompts import render_qa, render_utility
from .records import Document, Query, load_dataset
from .summarizer import render_summary_instruction

log = logging.getLogger(__name__)

DEFAULT_ANSWER_TOKENS = 16
CSV_COLUMNS = ("query_id", "em", "f1", "selective_retrieval_fired", "n_docs_admitted", "summary_ratio")

__all__ = [
    "EvalRecord",
    "EvalResult",
    "Knowledge",
    "KnowledgeKind",
    "answer",
    "evaluate",
    "exact_match",
    "load_dataset",
    "normalize_answer",
    "render_qa_prompt",
    "render_summary_instruction",
    "render_utility_prompt",
    "token_f1",
]


def render_qa_prompt(query: Query, knowledge: Knowledge) -> str:
    return render_qa(query.text, knowledge.text)


def render_utility_prompt(query: Query, doc: Document | None, answer: str) -> str:
    return render_utility(query.text, doc, answer)


def answer(
    oracle: Oracle, query: Query, knowledge: Knowledge, *, seed: int = 0, max_tokens: int = DEFAULT_ANSWER_TOKENS
) -> str:
    """Generate over the QA prompt; only trailing whitespace is stripped."""
    meta = {"gold_answers": list(query.gold_answers), "question": query.text}
    try:
        return oracle.generate(GenRequest(render_qa_prompt(query, knowledge), max_tokens, seed, meta)).rstrip()
    except OracleError as exc:
        raise OracleFailure(f"answer generation failed for query {query.id!r}: {exc}") from exc


@dataclass(frozen=True)
class EvalRecord:
    query_id: str
    prediction: str
    em: int
    f1: float
    selective_fired: bool = False
    n_docs_admitted: int = 0
    summary_ratio: float | None = None
    error: str | None = None

    def to_json(self) -> dict:
        return asdict(self)


@dataclass
class EvalResult:
    records: list[EvalRecord]
    em_mean: float
    f1_mean: float
    config_fingerprint: str
    failures: int = 0
    meta: dict = field(default_factory=dict)

    @classmethod
    def from_records(cls, records: Sequence[EvalRecord], config_fingerprint: str) -> EvalResult:
        if not records:
            raise EmptyDataset("no records to aggregate")
        n = len(records)
        return cls(
            list(records),
            sum(r.em for r in records) / n,
            sum(r.f1 for r in records) / n,
            config_fingerprint,
            sum(1 for r in records if r.error),
        )

    def to_json(self) -> dict:
        return {
            "config_fingerprint": self.config_fingerprint,
            "em_mean": self.em_mean,
            "f1_mean": self.f1_mean,
            "n_queries": len(self.records),
            "failures": self.failures,
            "records": [r.to_json() for r in self.records],
            **self.meta,
        }

    def write_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n", encoding="utf-8")

    def write_csv(self, path: str | Path, header_comment: str | None = None) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            if header_comment:
                fh.write(f"# {header_comment}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CSV_COLUMNS)
            for r in self.records:
                ratio = "" if r.summary_ratio is None else repr(r.summary_ratio)
                w.writerow([r.query_id, r.em, repr(r.f1), int(r.selective_fired), r.n_docs_admitted, ratio])


def _evaluate_one(query: Query, pipeline: Pipeline, oracle: Oracle, seed: int) -> EvalRecord:
    admission = pipeline.admit(query)
    knowledge, ratio = pipeline.knowledge(query, admission)
    n_docs = len(admission.docs)
    try:
        pred = answer(oracle, query, knowledge, seed=seed)
    except OracleFailure as exc:
        log.warning("query %s: %s", query.id, exc)
        return EvalRecord(query.id, "", 0, 0.0, admission.selective_fired, n_docs, ratio, str(exc))
    return EvalRecord(
        query.id,
        pred,
        exact_match(pred, query.gold_answers),
        token_f1(pred, query.gold_answers),
        admission.selective_fired,
        n_docs,
        ratio,
    )


def evaluate(
    queries: Sequence[Query],
    pipeline: Pipeline,
    oracle: Oracle,
    *,
    seed: int = 0,
    max_parallel: int = 1,
    config_fingerprint: str | None = None,
) -> EvalResult:
    """Admit, build knowledge, answer and score every query.

    Records come back in dataset order whatever the parallelism. An oracle
    failure for one query scores it zero and notes the error.
    """
    if not queries:
        raise EmptyDataset("evaluation dataset is empty")
    if config_fingerprint is None:
        config_fingerprint = request_hash(pipeline.config.to_json())
    if max_parallel > 1:
        with ThreadPoolExecutor(max_workers=max_parallel) as pool:
            records = list(pool.map(lambda q: _evaluate_one(q, pipeline, oracle, seed), queries))
    else:
        records = [_evaluate_one(q, pipeline, oracle, seed) for q in queries]
    return EvalResult.from_records(records, config_fingerprint)


def format_grid(rows: Sequence[tuple[str, EvalResult]]) -> str:
    """Plain-text table: one row per dataset, EM and F1 as percentages."""
    width = max([len("dataset")] + [len(name) for name, _ in rows])
    lines = [f"{'dataset':<{width}}  {'EM':>6}  {'F1':>6}"]
    for name, res in rows:
        lines.append(f"{name:<{width}}  {100 * res.em_mean:6.2f}  {100 * res.f1_mean:6.2f}")
    return "\n".join(lines)
