"""Query-time composition: similarity pool, utility rerank, fusion, knowledge.

The similarity index proposes a candidate pool; the utility encoder scores
that pool plus the empty-string sentinel. If the sentinel wins outright no
documents are used. Otherwise the two rankings are fused and the admitted
documents turned into raw or summarized knowledge.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from enum import Enum

from .errors import InputError
from .fusion import AdmittedSet, FusionConfig, fuse
from .prompts import join_docs
from .records import EMPTY_STRING_DOC, Document, Query
from .retriever import DEFAULT_TOP_K, Index, ScoredDoc, retrieve_topk
from .summarizer import compression_ratio, extractive_summarize
from .textcore import EncoderParams
from .utility import selective_retrieval, utility_scores


class KnowledgeKind(str, Enum):
    RAW_DOCS = "raw_docs"
    SUMMARY = "summary"
    NONE = "none"


@dataclass(frozen=True)
class Knowledge:
    kind: KnowledgeKind
    text: str = ""

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", KnowledgeKind(self.kind))
        if self.kind is KnowledgeKind.NONE and self.text:
            raise InputError("knowledge of kind 'none' must have empty text")


@dataclass
class PipelineConfig:
    total_k: int = DEFAULT_TOP_K
    k_sim: int | None = None
    k_util: int | None = None
    pool_size: int = 10
    use_fusion: bool = True
    selective: bool = True
    knowledge: str = KnowledgeKind.SUMMARY.value
    max_chars: int = 200

    def __post_init__(self) -> None:
        KnowledgeKind(self.knowledge)
        if self.pool_size < 1:
            raise InputError("pool_size must be >= 1")
        FusionConfig.from_total(self.total_k, self.k_sim, self.k_util)

    @property
    def fusion(self) -> FusionConfig:
        return FusionConfig.from_total(self.total_k, self.k_sim, self.k_util)

    def to_json(self) -> dict:
        return asdict(self)


@dataclass
class Admission:
    query_id: str
    docs: list[Document]
    selective_fired: bool
    sim_scored: list[ScoredDoc] = field(default_factory=list)
    util_scored: list[ScoredDoc] = field(default_factory=list)
    admitted: AdmittedSet | None = None


class Pipeline:
    def __init__(self, sim_index: Index, utility_params: EncoderParams | None, config: PipelineConfig):
        if config.use_fusion and utility_params is None:
            raise InputError("fusion requires a utility model; disable fusion to run similarity only")
        self.index = sim_index
        self.utility_params = utility_params
        self.config = config

    def admit(self, query: Query) -> Admission:
        cfg = self.config
        if not cfg.use_fusion:
            sim = retrieve_topk(self.index, query.text, cfg.total_k)
            return Admission(query.id, [self.index.doc(s.doc_id) for s in sim], False, sim)

        sim = retrieve_topk(self.index, query.text, max(cfg.pool_size, cfg.total_k))
        pool = [self.index.doc(s.doc_id) for s in sim]
        util = utility_scores(self.utility_params, query.text, pool + [EMPTY_STRING_DOC])
        if cfg.selective and selective_retrieval(util):
            return Admission(query.id, [], True, sim, util)
        util_docs = util[:-1]
        admitted = fuse(sim, util_docs, cfg.fusion)
        docs = [self.index.doc(i) for i in admitted.doc_ids]
        return Admission(query.id, docs, False, sim, util_docs, admitted)

    def admitted_docs(self, query: Query) -> list[Document]:
        return self.admit(query).docs

    def knowledge(self, query: Query, admission: Admission) -> tuple[Knowledge, float | None]:
        """Knowledge for the answer prompt and, for summaries, the compression ratio."""
        kind = KnowledgeKind(self.config.knowledge)
        if admission.selective_fired or not admission.docs or kind is KnowledgeKind.NONE:
            return Knowledge(KnowledgeKind.NONE), None
        if kind is KnowledgeKind.RAW_DOCS:
            return Knowledge(kind, join_docs(admission.docs)), None
        summary = extractive_summarize(query, admission.docs, self.config.max_chars)
        return Knowledge(kind, summary), compression_ratio(summary, admission.docs)

    def summarize(self, query: Query) -> str:
        adm = self.admit(query)
        if not adm.docs:
            return ""
        return extractive_summarize(query, adm.docs, self.config.max_chars)
