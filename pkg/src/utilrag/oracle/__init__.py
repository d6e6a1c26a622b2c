"""Pluggable LLM oracle: scoring of answer continuations and generation."""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path

from ..errors import InputError
from .base import (
    ENV_CACHE_DIR,
    ENV_TOKEN,
    ENV_URL,
    CountingOracle,
    GenRequest,
    Oracle,
    ScoreRequest,
    ScoreResponse,
    canonical_json,
    request_hash,
)
from .cache import DiskCache
from .mock import MockOracle, load_parametric_answers
from .remote import RemoteOracle, RetryableError, Transport

__all__ = [
    "CountingOracle",
    "DiskCache",
    "GenRequest",
    "MockOracle",
    "Oracle",
    "OracleConfig",
    "RemoteOracle",
    "RetryableError",
    "ScoreRequest",
    "ScoreResponse",
    "canonical_json",
    "make_oracle",
    "request_hash",
]


@dataclass
class OracleConfig:
    kind: str = "mock"
    endpoint_url: str | None = None
    auth_token_env_var: str = ENV_TOKEN
    timeout: float = 30.0
    max_parallel: int = 4
    retries: int = 2
    backoff: float = 0.5
    cache_dir: str | None = None
    parametric_answers: dict[str, str] = field(default_factory=dict)
    parametric_answers_path: str | None = None

    def __post_init__(self) -> None:
        if self.kind not in ("mock", "remote"):
            raise InputError(f"oracle kind must be 'mock' or 'remote', got {self.kind!r}")
        if self.max_parallel < 1:
            raise InputError("oracle max_parallel must be >= 1")
        if self.retries < 0:
            raise InputError("oracle retries must be >= 0")

    def resolved_url(self) -> str | None:
        return self.endpoint_url or os.environ.get(ENV_URL) or None


def make_oracle(config: OracleConfig, transport: Transport | None = None) -> Oracle:
    if config.kind == "mock":
        answers = dict(config.parametric_answers)
        if config.parametric_answers_path:
            answers.update(load_parametric_answers(config.parametric_answers_path))
        return MockOracle(answers)
    url = config.resolved_url()
    if not url:
        raise InputError(f"remote oracle requires endpoint_url or ${ENV_URL}")
    cache_dir = config.cache_dir or os.environ.get(ENV_CACHE_DIR)
    cache = DiskCache(Path(cache_dir)) if cache_dir else None
    return RemoteOracle(
        url,
        token=os.environ.get(config.auth_token_env_var) or None,
        timeout=config.timeout,
        max_parallel=config.max_parallel,
        retries=config.retries,
        backoff=config.backoff,
        cache=cache,
        transport=transport,
    )
