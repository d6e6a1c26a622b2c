"""Brute-force cosine index over a corpus and the temperature softmax."""

from __future__ import annotations

import hashlib
import io
import json
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import (
    ArtifactError,
    DuplicateId,
    EmptyCorpus,
    InputError,
    NonPositiveTemperature,
)
from .records import SENTINEL_ID, Document
from .textcore import EncoderParams, FeatureVector, encode, featurize, tokenize

DEFAULT_TOP_K = 5
DEFAULT_TEMPERATURE = 0.05
INDEX_FORMAT_VERSION = 1
_INDEX_MAGIC = b"UTILRAG-INDEX\n"


class Source(str, Enum):
    SIMILARITY = "similarity"
    UTILITY = "utility"


@dataclass(frozen=True)
class ScoredDoc:
    doc_id: str
    score: float
    source: Source = Source.SIMILARITY

    def __post_init__(self) -> None:
        if not math.isfinite(self.score):
            raise InputError(f"score for {self.doc_id!r} is not finite: {self.score}")


@dataclass(frozen=True)
class DocDistribution:
    entries: tuple[tuple[str, float], ...]
    temperature: float

    @property
    def ids(self) -> list[str]:
        return [i for i, _ in self.entries]

    @property
    def probs(self) -> np.ndarray:
        return np.array([p for _, p in self.entries])

    def as_dict(self) -> dict[str, float]:
        return dict(self.entries)


def document_features(doc: Document, dim: int) -> FeatureVector:
    return featurize(tokenize(f"{doc.title} {doc.text}"), dim)


def query_features(text: str, dim: int) -> FeatureVector:
    return featurize(tokenize(text), dim)


@dataclass(eq=False)
class Index:
    documents: list[Document]
    embeddings: np.ndarray
    params_fingerprint: str
    params: EncoderParams | None = field(default=None, repr=False)
    _by_id: dict[str, int] = field(default_factory=dict, repr=False)
    _features: list[FeatureVector] | None = field(default=None, repr=False)

    def __post_init__(self) -> None:
        self._by_id = {d.id: i for i, d in enumerate(self.documents)}

    def __len__(self) -> int:
        return len(self.documents)

    def doc(self, doc_id: str) -> Document:
        return self.documents[self._by_id[doc_id]]

    def features(self, doc_id: str) -> FeatureVector:
        if self._features is None:
            dim = self._require_params().in_dim
            self._features = [document_features(d, dim) for d in self.documents]
        return self._features[self._by_id[doc_id]]

    def _require_params(self) -> EncoderParams:
        if self.params is None:
            raise InputError("index was loaded without encoder params")
        return self.params

    def score_all(self, query_text: str) -> np.ndarray:
        params = self._require_params()
        q = encode(params, query_features(query_text, params.in_dim))
        return _cosines(self.embeddings, q)

    # -- serialization ---------------------------------------------------

    def to_bytes(self, meta: dict | None = None) -> bytes:
        header = {
            "format_version": INDEX_FORMAT_VERSION,
            "params_fingerprint": self.params_fingerprint,
            "n_docs": len(self.documents),
            "dim": int(self.embeddings.shape[1]),
            "dtype": "<f8",
            "documents": [d.to_json() for d in self.documents],
            "meta": meta or {},
        }
        buf = io.BytesIO()
        buf.write(_INDEX_MAGIC)
        buf.write(json.dumps(header, sort_keys=True, ensure_ascii=False, separators=(",", ":")).encode())
        buf.write(b"\n")
        buf.write(np.ascontiguousarray(self.embeddings, dtype="<f8").tobytes())
        return buf.getvalue()

    @classmethod
    def from_bytes(cls, blob: bytes, params: EncoderParams | None = None) -> Index:
        if not blob.startswith(_INDEX_MAGIC):
            raise ArtifactError("not an index artifact (bad magic)")
        rest = blob[len(_INDEX_MAGIC):]
        nl = rest.find(b"\n")
        try:
            header = json.loads(rest[:nl])
        except json.JSONDecodeError as exc:
            raise ArtifactError(f"index header is not JSON: {exc}") from None
        if header.get("format_version") != INDEX_FORMAT_VERSION:
            raise ArtifactError(f"unsupported index format_version {header.get('format_version')!r}")
        n, dim = int(header["n_docs"]), int(header["dim"])
        payload = rest[nl + 1:]
        if len(payload) != n * dim * 8:
            raise ArtifactError("index payload size does not match header")
        if params is not None and params.fingerprint() != header["params_fingerprint"]:
            raise ArtifactError("index was built with different encoder params")
        docs = [Document(d["id"], d["title"], d["text"]) for d in header["documents"]]
        emb = np.frombuffer(payload, dtype="<f8").reshape(n, dim).astype(np.float64)
        return cls(docs, emb, header["params_fingerprint"], params)

    @staticmethod
    def read_meta(path: str | Path) -> dict:
        """The ``meta`` block of a saved index, without decoding embeddings."""
        with open(path, "rb") as fh:
            if fh.read(len(_INDEX_MAGIC)) != _INDEX_MAGIC:
                raise ArtifactError("not an index artifact (bad magic)")
            try:
                return json.loads(fh.readline()).get("meta") or {}
            except json.JSONDecodeError as exc:
                raise ArtifactError(f"index header is not JSON: {exc}") from None

    def save(self, path: str | Path, meta: dict | None = None) -> None:
        Path(path).write_bytes(self.to_bytes(meta))

    @classmethod
    def load(cls, path: str | Path, params: EncoderParams | None = None) -> Index:
        return cls.from_bytes(Path(path).read_bytes(), params)


def _cosines(matrix: np.ndarray, q: np.ndarray) -> np.ndarray:
    qn = np.sqrt(np.dot(q, q))
    if qn == 0.0 or matrix.size == 0:
        return np.zeros(matrix.shape[0])
    norms = np.sqrt(np.einsum("ij,ij->i", matrix, matrix))
    dots = matrix @ q
    out = np.zeros(matrix.shape[0])
    nz = norms > 0
    out[nz] = dots[nz] / (norms[nz] * qn)
    return out


def build_index(corpus: Sequence[Document], params: EncoderParams) -> Index:
    """Embed ``title + " " + text`` of every document with ``params``."""
    if not corpus:
        raise EmptyCorpus("cannot index an empty corpus")
    seen: set[str] = set()
    for doc in corpus:
        if doc.id in seen:
            raise DuplicateId(f"duplicate document id {doc.id!r}")
        if not doc.text and doc.id != SENTINEL_ID:
            raise InputError(f"document {doc.id!r} has empty text")
        seen.add(doc.id)
    feats = [document_features(d, params.in_dim) for d in corpus]
    emb = np.vstack([encode(params, f) for f in feats])
    index = Index(list(corpus), emb, params.fingerprint(), params)
    index._features = feats
    return index


def rank(scores: dict[str, float] | Sequence[tuple[str, float]]) -> list[tuple[str, float]]:
    """Descending score, ties broken by ascending id."""
    items = scores.items() if isinstance(scores, dict) else scores
    return sorted(items, key=lambda kv: (-kv[1], kv[0]))


def retrieve_topk(index: Index, query_text: str, k: int = DEFAULT_TOP_K) -> list[ScoredDoc]:
    if k < 1:
        raise InputError(f"k must be >= 1, got {k}")
    if len(index) == 0:
        raise EmptyCorpus("index is empty")
    scores = index.score_all(query_text)
    ranked = rank([(d.id, float(s)) for d, s in zip(index.documents, scores)])
    return [ScoredDoc(i, s, Source.SIMILARITY) for i, s in ranked[:k]]


def log_softmax(logits: Sequence[float]) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max()
    return z - np.log(np.sum(np.exp(z)))


def softmax(logits: Sequence[float]) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    e = np.exp(z - z.max())
    return e / e.sum()


def softmax_distribution(scores: Sequence[ScoredDoc], temperature: float = DEFAULT_TEMPERATURE) -> DocDistribution:
    """``p_i = exp(s_i / t) / sum_j exp(s_j / t)``, computed after max-subtraction."""
    if not temperature > 0:
        raise NonPositiveTemperature(f"temperature must be > 0, got {temperature}")
    if not scores:
        raise InputError("softmax over an empty score list")
    probs = softmax([s.score / temperature for s in scores])
    return DocDistribution(tuple((s.doc_id, float(p)) for s, p in zip(scores, probs)), temperature)


def corpus_fingerprint(docs: Sequence[Document]) -> str:
    h = hashlib.sha256()
    for d in docs:
        h.update(json.dumps(d.to_json(), sort_keys=True, ensure_ascii=False).encode())
        h.update(b"\n")
    return h.hexdigest()
