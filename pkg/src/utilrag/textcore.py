"""Tokenization, hashed features, the trainable linear encoder and cosine.

The encoder is ``normalize(W @ x)`` where ``x`` is an L2-normalized bag of
hashed unigrams and adjacent bigrams. Everything here is pure numpy so the
gradient in :func:`encoder_backward` can be checked against finite
differences.
"""

from __future__ import annotations

import hashlib
import io
import json
import re
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ArtifactError, DimensionMismatch, InputError

__all__ = [
    "FORMAT_VERSION",
    "HASH_ID",
    "EncoderParams",
    "FeatureVector",
    "cosine",
    "encode",
    "encoder_backward",
    "featurize",
    "fnv1a_64",
    "split_sentences",
    "tokenize",
]

DEFAULT_IN_DIM = 4096
DEFAULT_OUT_DIM = 64

FORMAT_VERSION = 1
HASH_ID = "fnv1a64"
_MAGIC = b"UTILRAG-ENCODER\n"

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK64 = 0xFFFFFFFFFFFFFFFF

# Unicode letters and digits; underscore is excluded so that the bigram
# join character can never appear inside a token.
_TOKEN_RE = re.compile(r"[^\W_]+")


def tokenize(text: str) -> list[str]:
    """Lowercase ``text`` and split it on every non-alphanumeric character."""
    return _TOKEN_RE.findall(text.lower())


@lru_cache(maxsize=1 << 16)
def fnv1a_64(key: str) -> int:
    """64-bit FNV-1a over the UTF-8 bytes of ``key``."""
    h = _FNV_OFFSET
    for byte in key.encode("utf-8"):
        h ^= byte
        h = (h * _FNV_PRIME) & _MASK64
    return h


@dataclass(frozen=True, eq=False)
class FeatureVector:
    """Sparse L2-normalized feature vector.

    ``indices`` is sorted and unique; ``values`` are the matching weights.
    """

    dim: int
    indices: np.ndarray
    values: np.ndarray

    @property
    def entries(self) -> dict[int, float]:
        return {int(i): float(v) for i, v in zip(self.indices, self.values)}

    @property
    def is_empty(self) -> bool:
        return self.indices.size == 0

    def to_dense(self) -> np.ndarray:
        out = np.zeros(self.dim)
        out[self.indices] = self.values
        return out

    @classmethod
    def from_dense(cls, dense: Sequence[float]) -> FeatureVector:
        """Wrap an explicit vector (used by tests and identity encoders).

        The values are taken as-is, not renormalized.
        """
        arr = np.asarray(dense, dtype=np.float64)
        idx = np.flatnonzero(arr)
        return cls(arr.size, idx.astype(np.int64), arr[idx].copy())

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, FeatureVector):
            return NotImplemented
        return (
            self.dim == other.dim
            and np.array_equal(self.indices, other.indices)
            and np.array_equal(self.values, other.values)
        )


def featurize(tokens: Sequence[str], dim: int = DEFAULT_IN_DIM) -> FeatureVector:
    """Hash unigrams and adjacent bigrams into ``dim`` buckets, then L2-normalize."""
    if dim < 2:
        raise InputError(f"feature dim must be >= 2, got {dim}")
    counts: dict[int, float] = {}
    keys = list(tokens)
    keys += [f"{a}_{b}" for a, b in zip(tokens, tokens[1:])]
    for key in keys:
        slot = fnv1a_64(key) % dim
        counts[slot] = counts.get(slot, 0.0) + 1.0
    if not counts:
        return FeatureVector(dim, np.zeros(0, dtype=np.int64), np.zeros(0))
    idx = np.array(sorted(counts), dtype=np.int64)
    vals = np.array([counts[i] for i in idx.tolist()])
    vals /= np.sqrt(np.dot(vals, vals))
    return FeatureVector(dim, idx, vals)


@dataclass(eq=False)
class EncoderParams:
    """Weights of the linear encoder, shape ``(out_dim, in_dim)``."""

    weights: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        w = np.asarray(self.weights, dtype=np.float64)
        if w.ndim != 2 or w.shape[0] < 1 or w.shape[1] < 1:
            raise DimensionMismatch(f"weights must be a non-empty matrix, got shape {w.shape}")
        if not np.all(np.isfinite(w)):
            raise InputError("encoder weights must be finite")
        self.weights = w

    @property
    def in_dim(self) -> int:
        return self.weights.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights.shape[0]

    @classmethod
    def identity(cls, dim: int) -> EncoderParams:
        return cls(np.eye(dim))

    @classmethod
    def random(cls, in_dim: int = DEFAULT_IN_DIM, out_dim: int = DEFAULT_OUT_DIM, seed: int = 0) -> EncoderParams:
        """Gaussian random projection, entries ~ N(0, 1/out_dim)."""
        rng = np.random.default_rng(seed)
        return cls(rng.normal(0.0, 1.0 / np.sqrt(out_dim), size=(out_dim, in_dim)))

    @classmethod
    def spectral(
        cls,
        features: Sequence[FeatureVector],
        out_dim: int = DEFAULT_OUT_DIM,
        seed: int = 0,
        fill_scale: float = 1e-3,
    ) -> EncoderParams:
        """Rows are the top right singular vectors of a feature matrix.

        Fit on documents (and, ideally, representative questions). When those
        span at most ``out_dim`` directions, cosine under this encoder matches
        cosine on the raw features for any vector inside the span, up to the
        small fill noise.
        Unused rows get small Gaussian noise so they remain trainable; each
        singular vector is sign-fixed so its largest entry is positive.
        """
        if not features:
            raise InputError("spectral init needs at least one feature vector")
        in_dim = features[0].dim
        if any(f.dim != in_dim for f in features):
            raise DimensionMismatch("feature vectors have differing dims")
        x = np.zeros((len(features), in_dim))
        for r, f in enumerate(features):
            x[r, f.indices] = f.values
        if len(features) <= in_dim:
            _, s, vt = np.linalg.svd(x, full_matrices=False)
        else:
            evals, evecs = np.linalg.eigh(x.T @ x)
            order = np.argsort(evals)[::-1]
            s, vt = np.sqrt(np.clip(evals[order], 0, None)), evecs[:, order].T
        keep = int(min(out_dim, np.sum(s > 1e-10 * max(s[0], 1e-300))))
        w = np.random.default_rng(seed).normal(0.0, fill_scale / np.sqrt(out_dim), size=(out_dim, in_dim))
        basis = vt[:keep].copy()
        pivots = np.argmax(np.abs(basis), axis=1)
        basis *= np.sign(basis[np.arange(keep), pivots])[:, None]
        w[:keep] = basis
        return cls(w, {"init": "spectral", "rank": keep})

    def copy(self) -> EncoderParams:
        return EncoderParams(self.weights.copy(), dict(self.meta))

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(f"{self.out_dim}x{self.in_dim}:{HASH_ID}:".encode())
        h.update(np.ascontiguousarray(self.weights, dtype="<f8").tobytes())
        return h.hexdigest()

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, EncoderParams):
            return NotImplemented
        return np.array_equal(self.weights, other.weights)

    # -- serialization ---------------------------------------------------

    def to_bytes(self) -> bytes:
        header = {
            "format_version": FORMAT_VERSION,
            "in_dim": self.in_dim,
            "out_dim": self.out_dim,
            "hash_id": HASH_ID,
            "dtype": "<f8",
            "meta": self.meta,
        }
        buf = io.BytesIO()
        buf.write(_MAGIC)
        buf.write(json.dumps(header, sort_keys=True, separators=(",", ":")).encode())
        buf.write(b"\n")
        buf.write(np.ascontiguousarray(self.weights, dtype="<f8").tobytes())
        return buf.getvalue()

    @classmethod
    def from_bytes(cls, blob: bytes) -> EncoderParams:
        if not blob.startswith(_MAGIC):
            raise ArtifactError("not an encoder artifact (bad magic)")
        rest = blob[len(_MAGIC):]
        nl = rest.find(b"\n")
        if nl < 0:
            raise ArtifactError("encoder artifact header is truncated")
        try:
            header = json.loads(rest[:nl])
        except json.JSONDecodeError as exc:
            raise ArtifactError(f"encoder artifact header is not JSON: {exc}") from None
        if header.get("format_version") != FORMAT_VERSION:
            raise ArtifactError(f"unsupported encoder format_version {header.get('format_version')!r}")
        if header.get("hash_id") != HASH_ID:
            raise ArtifactError(f"encoder was built with hash {header.get('hash_id')!r}, expected {HASH_ID}")
        in_dim, out_dim = int(header["in_dim"]), int(header["out_dim"])
        payload = rest[nl + 1:]
        if len(payload) != in_dim * out_dim * 8:
            raise ArtifactError(
                f"encoder payload has {len(payload)} bytes, expected {in_dim * out_dim * 8}"
            )
        w = np.frombuffer(payload, dtype="<f8").reshape(out_dim, in_dim).astype(np.float64)
        return cls(w, header.get("meta") or {})

    def save(self, path: str | Path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path: str | Path) -> EncoderParams:
        return cls.from_bytes(Path(path).read_bytes())


def _check_dims(params: EncoderParams, features: FeatureVector) -> None:
    if features.dim != params.in_dim:
        raise DimensionMismatch(f"feature dim {features.dim} != encoder in_dim {params.in_dim}")


def _project(params: EncoderParams, features: FeatureVector) -> np.ndarray:
    _check_dims(params, features)
    if features.is_empty:
        return np.zeros(params.out_dim)
    return params.weights[:, features.indices] @ features.values


def encode(params: EncoderParams, features: FeatureVector) -> np.ndarray:
    """``normalize(W @ x)``; a zero projection stays the zero vector."""
    u = _project(params, features)
    norm = np.sqrt(np.dot(u, u))
    if norm == 0.0:
        return np.zeros(params.out_dim)
    return u / norm


def cosine(a: Sequence[float], b: Sequence[float]) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionMismatch(f"cosine of vectors with shapes {a.shape} and {b.shape}")
    na = np.sqrt(np.dot(a, a))
    nb = np.sqrt(np.dot(b, b))
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.dot(a, b) / (na * nb))


def encoder_backward(
    params: EncoderParams,
    inputs: Sequence[FeatureVector],
    grad_wrt_scores: Sequence[float],
    query_features: FeatureVector,
) -> np.ndarray:
    """Gradient w.r.t. ``W`` of ``sum_i g_i * cosine(encode(W, q), encode(W, d_i))``.

    With ``u = W x`` and ``e = u / |u|`` the cosine equals ``e_q . e_i`` and

        d/du_q = g_i (e_i - s_i e_q) / |u_q|,   d/du_i = g_i (e_q - s_i e_i) / |u_i|

    Inputs whose projection is zero have a constant score of 0 and
    contribute nothing.
    """
    if len(inputs) != len(grad_wrt_scores):
        raise DimensionMismatch(f"{len(inputs)} inputs but {len(grad_wrt_scores)} score gradients")
    grad = np.zeros_like(params.weights)
    u_q = _project(params, query_features)
    n_q = np.sqrt(np.dot(u_q, u_q))
    if n_q == 0.0:
        for feats in inputs:
            _check_dims(params, feats)
        return grad
    e_q = u_q / n_q
    du_q = np.zeros(params.out_dim)
    for feats, g in zip(inputs, grad_wrt_scores):
        u_i = _project(params, feats)
        n_i = np.sqrt(np.dot(u_i, u_i))
        if n_i == 0.0 or g == 0.0:
            continue
        e_i = u_i / n_i
        s_i = np.dot(e_q, e_i)
        du_q += g * (e_i - s_i * e_q)
        du_i = g * (e_q - s_i * e_i) / n_i
        grad[:, feats.indices] += np.outer(du_i, feats.values)
    grad[:, query_features.indices] += np.outer(du_q / n_q, query_features.values)
    return grad


_SENTENCE_RE = re.compile(r"[^.?!]*[.?!]+|[^.?!]+$")


def split_sentences(text: str) -> list[str]:
    """Split on '.', '?' and '!', keeping the terminator; pieces are stripped.

    Whitespace-only pieces are dropped, so every returned sentence is a
    verbatim substring of ``text``.
    """
    out = []
    for m in _SENTENCE_RE.finditer(text):
        s = m.group(0).strip()
        if s:
            out.append(s)
    return out
