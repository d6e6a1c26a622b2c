"""HTTP client for an echo-scoring completion endpoint.

Wire contract (JSON over POST):

* scoring request  ``{"prompt", "continuation", "logprobs": true}``
* generation request ``{"prompt", "max_tokens", "seed", "temperature": 0, "logprobs": true}``
* responses carry either top-level ``token_logprobs`` / ``text`` or the
  completion-style ``choices[0].logprobs.token_logprobs`` / ``choices[0].text``.

Every response is cached on disk under the SHA-256 of the canonical
``{"endpoint", "body"}`` pair and replayed from there on later runs.
"""

from __future__ import annotations

import logging
import math
import threading
import time
from typing import Callable

import httpx

from ..errors import MalformedResponse, RemoteUnavailable
from .base import GenRequest, ScoreRequest, ScoreResponse, request_hash
from .cache import DiskCache

log = logging.getLogger(__name__)

Transport = Callable[[str, dict, dict, float], dict]


class RetryableError(Exception):
    """Raised by a transport for failures worth retrying (network, 5xx, 429)."""


def httpx_transport(url: str, body: dict, headers: dict, timeout: float) -> dict:
    try:
        resp = httpx.post(url, json=body, headers=headers, timeout=timeout)
    except httpx.TransportError as exc:
        raise RetryableError(str(exc)) from exc
    if resp.status_code == 429 or resp.status_code >= 500:
        raise RetryableError(f"HTTP {resp.status_code}")
    if resp.status_code >= 400:
        raise RemoteUnavailable(f"endpoint rejected request: HTTP {resp.status_code}")
    try:
        return resp.json()
    except ValueError as exc:
        raise MalformedResponse(f"response is not JSON: {exc}") from None


def _parse_logprobs(resp: dict) -> list[float]:
    lps = resp.get("token_logprobs")
    if lps is None:
        try:
            lps = resp["choices"][0]["logprobs"]["token_logprobs"]
        except (KeyError, IndexError, TypeError):
            raise MalformedResponse("response lacks token_logprobs") from None
    if not isinstance(lps, list) or not lps:
        raise MalformedResponse("token_logprobs must be a non-empty list")
    out = []
    for x in lps:
        if isinstance(x, bool) or not isinstance(x, (int, float)) or not math.isfinite(x):
            raise MalformedResponse(f"bad token log-probability {x!r}")
        if x > 1e-9:
            raise MalformedResponse(f"positive token log-probability {x!r}")
        out.append(min(float(x), 0.0))
    return out


def _parse_text(resp: dict) -> str:
    text = resp.get("text")
    if text is None:
        try:
            text = resp["choices"][0]["text"]
        except (KeyError, IndexError, TypeError):
            raise MalformedResponse("response lacks text") from None
    if not isinstance(text, str):
        raise MalformedResponse("text must be a string")
    return text


class RemoteOracle:
    def __init__(
        self,
        endpoint_url: str,
        *,
        token: str | None = None,
        timeout: float = 30.0,
        max_parallel: int = 4,
        retries: int = 2,
        backoff: float = 0.5,
        cache: DiskCache | None = None,
        transport: Transport | None = None,
    ):
        if not endpoint_url:
            raise ValueError("remote oracle requires an endpoint_url")
        if max_parallel < 1:
            raise ValueError("max_parallel must be >= 1")
        self.endpoint_url = endpoint_url
        self.identity = f"remote:{endpoint_url}"
        self._token = token
        self.timeout = timeout
        self.retries = retries
        self.backoff = backoff
        self.cache = cache
        self.transport = transport or httpx_transport
        self._slots = threading.BoundedSemaphore(max_parallel)
        self._memory: dict[str, dict] = {}
        self._mem_lock = threading.Lock()
        self.network_calls = 0

    def evict_memory(self) -> None:
        with self._mem_lock:
            self._memory.clear()

    def _headers(self) -> dict:
        headers = {"Content-Type": "application/json"}
        if self._token:
            headers["Authorization"] = f"Bearer {self._token}"
        return headers

    def _call(self, body: dict) -> dict:
        key = request_hash({"endpoint": self.endpoint_url, "body": body})
        with self._mem_lock:
            if key in self._memory:
                return self._memory[key]
        if self.cache is not None:
            cached = self.cache.get(key)
            if cached is not None:
                with self._mem_lock:
                    self._memory[key] = cached
                return cached
        resp = self._post_with_retries(body)
        if not isinstance(resp, dict):
            raise MalformedResponse("response must be a JSON object")
        if self.cache is not None:
            self.cache.put(key, {"endpoint": self.endpoint_url, "body": body}, resp)
        with self._mem_lock:
            self._memory[key] = resp
        return resp

    def _post_with_retries(self, body: dict) -> dict:
        last: Exception | None = None
        for attempt in range(self.retries + 1):
            if attempt:
                time.sleep(self.backoff * 2 ** (attempt - 1))
            try:
                with self._slots:
                    with self._mem_lock:
                        self.network_calls += 1
                    return self.transport(self.endpoint_url, body, self._headers(), self.timeout)
            except RetryableError as exc:
                last = exc
                log.warning("oracle request failed (attempt %d/%d): %s", attempt + 1, self.retries + 1, exc)
        raise RemoteUnavailable(f"{self.endpoint_url} unavailable after {self.retries + 1} attempts: {last}")

    def score_continuation(self, req: ScoreRequest) -> ScoreResponse:
        body = {"prompt": req.prompt, "continuation": req.continuation, "logprobs": True}
        return ScoreResponse.from_tokens(_parse_logprobs(self._call(body)))

    def generate(self, req: GenRequest) -> str:
        body = {
            "prompt": req.prompt,
            "max_tokens": req.max_tokens,
            "seed": req.seed,
            "temperature": 0,
            "logprobs": True,
        }
        return _parse_text(self._call(body))
