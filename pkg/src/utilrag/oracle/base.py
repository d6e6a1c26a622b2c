from __future__ import annotations

import hashlib
import json
import math
import threading
from dataclasses import dataclass, field
from typing import Protocol, Sequence, runtime_checkable

from ..errors import InputError, MalformedResponse

ENV_URL = "METRAG_ORACLE_URL"
ENV_TOKEN = "METRAG_ORACLE_TOKEN"
ENV_CACHE_DIR = "METRAG_CACHE_DIR"


@dataclass(frozen=True)
class ScoreRequest:
    """Score ``continuation`` given ``prompt``.

    ``metadata`` travels with the request but is never sent to a remote
    endpoint nor hashed into the cache key. The mock oracle reads the gold
    answers and the question from it.
    """

    prompt: str
    continuation: str
    metadata: dict = field(default_factory=dict, compare=False, hash=False)

    def __post_init__(self) -> None:
        if not self.continuation:
            raise InputError("continuation must be non-empty")


@dataclass(frozen=True)
class ScoreResponse:
    token_logprobs: tuple[float, ...]
    total_logprob: float

    def __post_init__(self) -> None:
        lps = tuple(float(x) for x in self.token_logprobs)
        object.__setattr__(self, "token_logprobs", lps)
        if not lps:
            raise MalformedResponse("score response has no token log-probabilities")
        if not all(math.isfinite(x) and x <= 0.0 for x in lps):
            raise MalformedResponse("token log-probabilities must be finite and <= 0")
        if abs(sum(lps) - self.total_logprob) > 1e-9:
            raise MalformedResponse("total_logprob does not equal the sum of token log-probabilities")

    @classmethod
    def from_tokens(cls, token_logprobs: Sequence[float]) -> ScoreResponse:
        lps = tuple(float(x) for x in token_logprobs)
        return cls(lps, math.fsum(lps))

    @property
    def mean_logprob(self) -> float:
        return self.total_logprob / len(self.token_logprobs)


@dataclass(frozen=True)
class GenRequest:
    prompt: str
    max_tokens: int = 64
    seed: int = 0
    metadata: dict = field(default_factory=dict, compare=False, hash=False)

    def __post_init__(self) -> None:
        if self.max_tokens < 1:
            raise InputError("max_tokens must be >= 1")


@runtime_checkable
class Oracle(Protocol):
    identity: str

    def score_continuation(self, req: ScoreRequest) -> ScoreResponse: ...

    def generate(self, req: GenRequest) -> str: ...


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, ensure_ascii=False, separators=(",", ":"))


def request_hash(obj) -> str:
    return hashlib.sha256(canonical_json(obj).encode("utf-8")).hexdigest()


class CountingOracle:
    """Wraps an oracle and counts calls; used to check caching contracts."""

    def __init__(self, inner: Oracle):
        self.inner = inner
        self.identity = inner.identity
        self.score_calls = 0
        self.generate_calls = 0
        self._lock = threading.Lock()

    def score_continuation(self, req: ScoreRequest) -> ScoreResponse:
        with self._lock:
            self.score_calls += 1
        return self.inner.score_continuation(req)

    def generate(self, req: GenRequest) -> str:
        with self._lock:
            self.generate_calls += 1
        return self.inner.generate(req)
