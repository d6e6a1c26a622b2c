"""Distilling LLM answer likelihoods into the retriever (the utility model).

For each training query the frozen similarity model picks a window of its
top-n documents, optionally followed by the empty-string sentinel. The
oracle scores the gold answer against every window entry once; those
scores define the target distribution P_U. Training moves the encoder so
that the similarity distribution P_R over the same window approaches P_U,
minimizing the mean of KL(P_R || P_U) with plain SGD.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import (
    DivergedLoss,
    IdSetMismatch,
    InputError,
    InsufficientDocs,
    MissingSentinel,
    NonPositiveTemperature,
    OracleError,
    OracleFailure,
    ZeroInSecondArgumentWithNonzeroFirst,
)
from .oracle import Oracle, ScoreRequest
from .prompts import utility_prompt_prefix
from .records import EMPTY_STRING_DOC, SENTINEL_ID, Document, Query
from .retriever import (
    DEFAULT_TEMPERATURE,
    DocDistribution,
    Index,
    ScoredDoc,
    Source,
    document_features,
    log_softmax,
    query_features,
    rank,
    retrieve_topk,
)
from .textcore import EncoderParams, FeatureVector, cosine, encode, encoder_backward

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainingWindow:
    query: Query
    docs: tuple[Document, ...]
    includes_es: bool
    answer: str

    @property
    def doc_ids(self) -> list[str]:
        return [d.id for d in self.docs]


@dataclass
class UtilityTrainConfig:
    temperature: float = DEFAULT_TEMPERATURE
    learning_rate: float = 0.2
    epochs: int = 5
    batch_size: int = 16
    window_size: int = 5
    seed: int = 0
    warmup_ratio: float = 0.2
    include_es: bool = True
    # "mean": P_LLM = exp(mean token log-prob); "total": exp(sum)
    length_norm: str = "mean"
    max_parallel: int = 4

    def __post_init__(self) -> None:
        if not self.temperature > 0:
            raise NonPositiveTemperature(f"temperature must be > 0, got {self.temperature}")
        for name in ("learning_rate",):
            if not getattr(self, name) > 0:
                raise InputError(f"{name} must be > 0")
        for name in ("epochs", "batch_size", "window_size", "max_parallel"):
            if getattr(self, name) < 1:
                raise InputError(f"{name} must be >= 1")
        if not 0 <= self.warmup_ratio < 1:
            raise InputError("warmup_ratio must be in [0, 1)")
        if self.length_norm not in ("mean", "total"):
            raise InputError("length_norm must be 'mean' or 'total'")


# -- construction ---------------------------------------------------------


def build_training_window(
    query: Query,
    retrieved: Sequence[ScoredDoc],
    n: int,
    include_es: bool,
    lookup: Index | Mapping[str, Document],
) -> TrainingWindow:
    """Top-``n`` of ``retrieved`` (already sorted by similarity), plus the sentinel."""
    if n < 1:
        raise InputError("window size must be >= 1")
    if n > len(retrieved):
        raise InsufficientDocs(f"window of {n} requested but only {len(retrieved)} documents retrieved")
    if not query.gold_answers:
        raise InputError(f"query {query.id!r} has no gold answers")
    get = lookup.doc if isinstance(lookup, Index) else lookup.__getitem__
    docs = [get(s.doc_id) for s in retrieved[:n]]
    if include_es:
        docs.append(EMPTY_STRING_DOC)
    return TrainingWindow(query, tuple(docs), include_es, query.gold_answers[0])


# -- distributions --------------------------------------------------------


def _ids(n: int, doc_ids: Sequence[str] | None) -> list[str]:
    if doc_ids is None:
        return [str(i) for i in range(n)]
    if len(doc_ids) != n:
        raise InputError(f"{len(doc_ids)} ids for {n} scores")
    return list(doc_ids)


def utility_logits(llm_logprobs: Sequence[float], temperature: float) -> np.ndarray:
    """``P_LLM / t`` with ``P_LLM = exp(log-prob)``."""
    if not temperature > 0:
        raise NonPositiveTemperature(f"temperature must be > 0, got {temperature}")
    return np.exp(np.asarray(llm_logprobs, dtype=np.float64)) / temperature


def utility_distribution(
    llm_logprobs: Sequence[float],
    temperature: float = DEFAULT_TEMPERATURE,
    doc_ids: Sequence[str] | None = None,
) -> DocDistribution:
    """Softmax over the answer probabilities (not log-probabilities) at temperature ``t``."""
    if len(llm_logprobs) == 0:
        raise InputError("utility distribution over an empty window")
    logits = utility_logits(llm_logprobs, temperature)
    probs = np.exp(log_softmax(logits))
    ids = _ids(len(probs), doc_ids)
    return DocDistribution(tuple(zip(ids, (float(p) for p in probs))), temperature)


def kl_divergence(p: DocDistribution, q: DocDistribution) -> float:
    """``sum_i p_i ln(p_i / q_i)`` with the convention ``0 ln(0/q) = 0``."""
    if p.ids != q.ids:
        raise IdSetMismatch("distributions are over different (or differently ordered) ids")
    total = 0.0
    for (doc_id, pi), (_, qi) in zip(p.entries, q.entries):
        if pi == 0.0:
            continue
        if qi == 0.0:
            raise ZeroInSecondArgumentWithNonzeroFirst(f"q({doc_id}) = 0 while p({doc_id}) = {pi}")
        total += pi * math.log(pi / qi)
    return total


# -- oracle supervision ---------------------------------------------------


class OracleScoreCache:
    """Memoizes oracle log-probs per (query id, doc id) within one run."""

    def __init__(self, oracle: Oracle, length_norm: str = "mean", max_parallel: int = 1):
        self.oracle = oracle
        self.length_norm = length_norm
        self.max_parallel = max_parallel
        self._scores: dict[tuple[str, str], float] = {}
        self.oracle_calls = 0
        self.hits = 0

    def _score_one(self, query: Query, doc: Document, answer: str) -> float:
        req = ScoreRequest(
            utility_prompt_prefix(query.text, doc),
            answer,
            metadata={"gold_answers": list(query.gold_answers), "question": query.text},
        )
        resp = self.oracle.score_continuation(req)
        return resp.mean_logprob if self.length_norm == "mean" else resp.total_logprob

    def window_logprobs(self, windows: Sequence[TrainingWindow]) -> list[list[float]]:
        todo: list[tuple[tuple[str, str], TrainingWindow, Document]] = []
        queued: set[tuple[str, str]] = set()
        for w in windows:
            for d in w.docs:
                key = (w.query.id, d.id)
                if key in self._scores or key in queued:
                    self.hits += 1
                    continue
                queued.add(key)
                todo.append((key, w, d))
        if todo:
            if self.max_parallel > 1 and len(todo) > 1:
                with ThreadPoolExecutor(max_workers=self.max_parallel) as pool:
                    results = list(pool.map(lambda t: self._score_one(t[1].query, t[2], t[1].answer), todo))
            else:
                results = [self._score_one(w.query, d, w.answer) for _, w, d in todo]
            self.oracle_calls += len(todo)
            for (key, _, _), value in zip(todo, results):
                self._scores[key] = value
        return [[self._scores[(w.query.id, d.id)] for d in w.docs] for w in windows]

    @property
    def unique_pairs(self) -> int:
        return len(self._scores)


# -- loss and gradient ----------------------------------------------------


@dataclass
class PreparedWindow:
    """A window reduced to what the loss needs: features and log P_U."""

    query_features: FeatureVector
    doc_features: list[FeatureVector]
    log_target: np.ndarray
    doc_ids: list[str] = field(default_factory=list)


def prepare_window(window: TrainingWindow, logprobs: Sequence[float], in_dim: int, temperature: float) -> PreparedWindow:
    return PreparedWindow(
        query_features(window.query.text, in_dim),
        [document_features(d, in_dim) for d in window.docs],
        log_softmax(utility_logits(logprobs, temperature)),
        window.doc_ids,
    )


def window_scores(params: EncoderParams, pw: PreparedWindow) -> np.ndarray:
    e_q = encode(params, pw.query_features)
    return np.array([cosine(e_q, encode(params, f)) for f in pw.doc_features])


def kl_loss_and_grad(
    params: EncoderParams,
    windows: Sequence[PreparedWindow],
    temperature: float,
    need_grad: bool = True,
) -> tuple[float, np.ndarray | None]:
    """Mean over windows of KL(P_R || P_U) and its gradient w.r.t. the weights.

    With ``p = softmax(s / t)`` and per-window loss ``L``:
    ``dL/ds_j = p_j * (ln p_j - ln u_j - L) / t``.
    """
    if not windows:
        raise InputError("no training windows")
    grad = np.zeros_like(params.weights) if need_grad else None
    total = 0.0
    for pw in windows:
        s = window_scores(params, pw)
        log_p = log_softmax(s / temperature)
        p = np.exp(log_p)
        diff = log_p - pw.log_target
        loss = float(np.dot(p, diff))
        total += loss
        if need_grad:
            g_s = p * (diff - loss) / temperature
            grad += encoder_backward(params, pw.doc_features, g_s.tolist(), pw.query_features)
    n = len(windows)
    if need_grad:
        grad /= n
    return total / n, grad


# -- training -------------------------------------------------------------


@dataclass
class TrainResult:
    params: EncoderParams
    loss_trace: list[tuple[int, float]]
    oracle_calls: int
    unique_pairs: int
    cache_hits: int
    steps: int
    windows: list[TrainingWindow] = field(default_factory=list, repr=False)


def make_windows(
    queries: Sequence[Query], index: Index, window_size: int, include_es: bool
) -> list[TrainingWindow]:
    out = []
    for q in queries:
        retrieved = retrieve_topk(index, q.text, window_size)
        out.append(build_training_window(q, retrieved, window_size, include_es, index))
    return out


def learning_rate_at(step: int, total_steps: int, base_lr: float, warmup_ratio: float) -> float:
    """Linear warm-up over the first ``warmup_ratio`` of steps, then constant."""
    warm = math.ceil(warmup_ratio * total_steps)
    if warm and step < warm:
        return base_lr * (step + 1) / warm
    return base_lr


def train_utility(
    config: UtilityTrainConfig,
    queries: Sequence[Query],
    index: Index,
    init_params: EncoderParams,
    oracle: Oracle,
    checkpoint_dir: str | Path | None = None,
) -> TrainResult:
    """Train the utility encoder starting from ``init_params``.

    ``index`` is the frozen similarity index that picks the windows. The
    loss trace records the full-pass mean loss at epoch 0 (before any step)
    and after every epoch.
    """
    if not queries:
        raise InputError("no training queries")
    windows = make_windows(queries, index, config.window_size, config.include_es)
    scorer = OracleScoreCache(oracle, config.length_norm, config.max_parallel)
    try:
        logprobs = scorer.window_logprobs(windows)
    except OracleError as exc:
        ckpt = None
        if checkpoint_dir is not None:
            ckpt = save_checkpoint(checkpoint_dir, init_params, config, 0, float("nan"), oracle.identity)
        raise OracleFailure(f"oracle failed while scoring training windows: {exc}", init_params.copy(), ckpt) from exc

    prepared = [prepare_window(w, lp, init_params.in_dim, config.temperature) for w, lp in zip(windows, logprobs)]
    params = init_params.copy()
    rng = np.random.default_rng(config.seed)
    n = len(prepared)
    per_epoch = math.ceil(n / config.batch_size)
    total_steps = per_epoch * config.epochs

    def full_loss() -> float:
        value, _ = kl_loss_and_grad(params, prepared, config.temperature, need_grad=False)
        if not math.isfinite(value):
            raise DivergedLoss(f"loss became {value}")
        return value

    trace = [(0, full_loss())]
    step = 0
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n)
        for b in range(per_epoch):
            batch = [prepared[i] for i in order[b * config.batch_size:(b + 1) * config.batch_size]]
            loss, grad = kl_loss_and_grad(params, batch, config.temperature)
            if not math.isfinite(loss) or not np.all(np.isfinite(grad)):
                raise DivergedLoss(f"non-finite loss or gradient at step {step}")
            lr = learning_rate_at(step, total_steps, config.learning_rate, config.warmup_ratio)
            params.weights -= lr * grad
            step += 1
        trace.append((epoch, full_loss()))
        log.debug("epoch %d mean KL %.6f", epoch, trace[-1][1])

    params.meta = {}
    if checkpoint_dir is not None:
        save_checkpoint(checkpoint_dir, params, config, config.epochs, trace[-1][1], oracle.identity)
    return TrainResult(params, trace, scorer.oracle_calls, scorer.unique_pairs, scorer.hits, step, windows)


# -- inference-side helpers -------------------------------------------------


def utility_scores(params: EncoderParams, query_text: str, docs: Sequence[Document]) -> list[ScoredDoc]:
    """Cosine under the utility encoder, in the order of ``docs``."""
    e_q = encode(params, query_features(query_text, params.in_dim))
    return [
        ScoredDoc(d.id, cosine(e_q, encode(params, document_features(d, params.in_dim))), Source.UTILITY)
        for d in docs
    ]


def ranking(scored: Sequence[ScoredDoc]) -> list[str]:
    return [doc_id for doc_id, _ in rank([(s.doc_id, s.score) for s in scored])]


def selective_retrieval(utility_scored: Sequence[ScoredDoc]) -> bool:
    """True (skip retrieval) iff the sentinel's score is strictly the greatest."""
    sentinel = [s for s in utility_scored if s.doc_id == SENTINEL_ID]
    if not sentinel:
        raise MissingSentinel("utility scores must include the empty-string sentinel")
    es = sentinel[0].score
    return all(s.score < es for s in utility_scored if s.doc_id != SENTINEL_ID)


# -- artifacts ------------------------------------------------------------


def save_checkpoint(
    directory: str | Path,
    params: EncoderParams,
    config: UtilityTrainConfig,
    epoch: int,
    mean_loss: float,
    oracle_identity: str,
    extra: dict | None = None,
) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    enc_path = directory / "utility.enc"
    params.save(enc_path)
    sidecar = {
        "config": asdict(config),
        "epoch": epoch,
        "mean_loss": mean_loss if math.isfinite(mean_loss) else None,
        "seed": config.seed,
        "oracle": oracle_identity,
        "params_fingerprint": params.fingerprint(),
    }
    if extra:
        sidecar.update(extra)
    (directory / "utility.json").write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return enc_path


def write_loss_csv(path: str | Path, trace: Sequence[tuple[int, float]], header_comment: str | None = None) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["epoch", "mean_loss"])
        for epoch, loss in trace:
            writer.writerow([epoch, repr(float(loss))])
