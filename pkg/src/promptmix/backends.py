"""Chat-completion and embedding backends.

Two families share one call-audit ledger:

* ``OpenAIChatBackend`` / ``OpenAIEmbeddingBackend`` speak the OpenAI-compatible
  HTTP contract (``{base_url}/chat/completions``, ``{base_url}/embeddings``)
  with exponential-backoff retries, a token-bucket rate limit, and a bounded
  in-flight cap. Any conforming endpoint works; the API key comes from the
  ``PROMPTMIX_API_KEY`` environment variable unless passed explicitly.
* ``TranscriptChatBackend`` and ``HashedTokenEmbedder`` are deterministic
  offline substitutes for tests and replay.

All backends are safe to call from multiple threads.
"""
from __future__ import annotations

import hashlib
import json
import math
import os
import random
import re
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Iterator, Protocol, Sequence

import requests

ROLES = ("system", "user", "assistant")

API_KEY_ENV = "PROMPTMIX_API_KEY"

EMBED_DIM = 256


class BackendError(Exception):
    """Base class for backend failures."""


class TransientError(BackendError):
    """Retryable failure: HTTP 429, 5xx, timeouts, connection resets."""

    def __init__(self, message: str, status: int | None = None, attempts: int = 1):
        super().__init__(message)
        self.status = status
        self.attempts = attempts


class PermanentError(BackendError):
    """Non-retryable failure: HTTP 4xx other than 429, missing transcript entry."""

    def __init__(self, message: str, status: int | None = None):
        super().__init__(message)
        self.status = status


class MalformedResponseError(BackendError):
    """The endpoint answered, but not in the documented shape."""


class SimulatedCrashError(RuntimeError):
    """Raised by fault-injecting offline backends to model a mid-run kill."""


@dataclass(frozen=True)
class ChatMessage:
    role: str
    content: str

    def __post_init__(self) -> None:
        if self.role not in ROLES:
            raise ValueError(f"invalid role {self.role!r}")
        if self.role in ("system", "user") and not self.content:
            raise ValueError(f"{self.role} message content must be non-empty")


@dataclass(frozen=True)
class CompletionParams:
    model: str
    temperature: float = 1.0
    max_tokens: int = 512
    request_timeout: float = 60.0

    def __post_init__(self) -> None:
        if self.temperature < 0 or self.temperature > 2.0:
            raise ValueError(f"temperature must be in [0, 2], got {self.temperature}")
        if self.max_tokens < 1:
            raise ValueError(f"max_tokens must be positive, got {self.max_tokens}")
        if self.request_timeout <= 0:
            raise ValueError(f"request_timeout must be positive, got {self.request_timeout}")


@dataclass(frozen=True)
class EmbeddingVector:
    values: tuple[float, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))
        if not self.values:
            raise ValueError("embedding must have at least one dimension")
        if not all(math.isfinite(v) for v in self.values):
            raise ValueError("embedding contains non-finite values")

    @property
    def dimension(self) -> int:
        return len(self.values)

    def norm(self) -> float:
        return math.sqrt(math.fsum(v * v for v in self.values))


@dataclass(frozen=True)
class BackendCall:
    kind: str  # "chat" | "embed"
    request_digest: str
    response_digest: str
    latency: float
    prompt_tokens: int
    completion_tokens: int
    attempt_count: int

    def __post_init__(self) -> None:
        if self.attempt_count < 1:
            raise ValueError("attempt_count must be >= 1")


def cosine(a: EmbeddingVector, b: EmbeddingVector) -> float:
    """Cosine similarity in [-1, 1]; errors on dimension mismatch or zero vectors."""
    if a.dimension != b.dimension:
        raise ValueError(f"dimension mismatch: {a.dimension} vs {b.dimension}")
    na, nb = a.norm(), b.norm()
    if na == 0.0 or nb == 0.0:
        raise ValueError("cosine undefined for zero vectors")
    dot = math.fsum(x * y for x, y in zip(a.values, b.values))
    return max(-1.0, min(1.0, dot / (na * nb)))


def messages_digest(messages: Sequence[ChatMessage]) -> str:
    """SHA-256 of the canonical serialization of a message list.

    This digest keys transcript mocks, so it must stay byte-stable.
    """
    payload = json.dumps(
        [{"role": m.role, "content": m.content} for m in messages],
        ensure_ascii=False,
        separators=(",", ":"),
        sort_keys=True,
    )
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def text_digest(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


class CallLedger:
    """Thread-safe append-only audit of logical backend requests.

    Retries increment a call's attempt_count; they never add ledger entries.
    """

    def __init__(self) -> None:
        self._calls: list[BackendCall] = []
        self._lock = threading.Lock()

    def record(self, call: BackendCall) -> None:
        with self._lock:
            self._calls.append(call)

    def __len__(self) -> int:
        with self._lock:
            return len(self._calls)

    def __iter__(self) -> Iterator[BackendCall]:
        with self._lock:
            return iter(list(self._calls))

    def count(self, kind: str | None = None) -> int:
        with self._lock:
            if kind is None:
                return len(self._calls)
            return sum(1 for c in self._calls if c.kind == kind)

    def summary(self) -> dict:
        with self._lock:
            calls = list(self._calls)
        return {
            "chat_calls": sum(1 for c in calls if c.kind == "chat"),
            "embed_calls": sum(1 for c in calls if c.kind == "embed"),
            "prompt_tokens": sum(c.prompt_tokens for c in calls),
            "completion_tokens": sum(c.completion_tokens for c in calls),
        }


class ChatBackend(Protocol):
    def complete(
        self, messages: Sequence[ChatMessage], params: CompletionParams
    ) -> tuple[str, BackendCall]: ...


class Embedder(Protocol):
    def embed(self, text: str) -> EmbeddingVector: ...


@dataclass(frozen=True)
class RetryPolicy:
    """Exponential backoff: the n-th retry waits base_delay * 2**(n-1), jittered.

    max_attempts bounds total attempts (first try included). jitter is the
    maximum multiplicative overshoot: each delay is scaled by a uniform draw
    from [1, 1 + jitter].
    """

    max_attempts: int = 3
    base_delay: float = 1.0
    max_delay: float = 30.0
    jitter: float = 0.1

    def delay_before_retry(self, retry_index: int, rng) -> float:
        base = min(self.base_delay * (2 ** (retry_index - 1)), self.max_delay)
        if self.jitter <= 0:
            return base
        return base * rng.uniform(1.0, 1.0 + self.jitter)


class RateLimiter:
    """Token bucket over requests per minute. None disables limiting."""

    def __init__(
        self,
        requests_per_minute: float | None,
        clock: Callable[[], float] = time.monotonic,
        sleep: Callable[[float], None] = time.sleep,
    ) -> None:
        self._rate = requests_per_minute / 60.0 if requests_per_minute else None
        self._capacity = float(requests_per_minute) if requests_per_minute else 0.0
        self._tokens = self._capacity
        self._clock = clock
        self._sleep = sleep
        self._last = clock()
        self._lock = threading.Lock()

    def acquire(self) -> None:
        if self._rate is None:
            return
        while True:
            with self._lock:
                now = self._clock()
                self._tokens = min(self._capacity, self._tokens + (now - self._last) * self._rate)
                self._last = now
                if self._tokens >= 1.0:
                    self._tokens -= 1.0
                    return
                wait = (1.0 - self._tokens) / self._rate
            self._sleep(wait)


def _requests_transport(
    url: str, payload: dict, headers: dict, timeout: float
) -> tuple[int, str]:
    try:
        response = requests.post(url, json=payload, headers=headers, timeout=timeout)
    except requests.Timeout as exc:
        raise TransientError(f"request timed out after {timeout}s: {exc}") from exc
    except requests.ConnectionError as exc:
        raise TransientError(f"connection failed: {exc}") from exc
    return response.status_code, response.text


class _HttpBackendBase:
    """Shared retry/rate-limit/in-flight machinery for the two HTTP backends."""

    def __init__(
        self,
        base_url: str,
        *,
        ledger: CallLedger,
        api_key: str | None = None,
        retry: RetryPolicy | None = None,
        rate_limiter: RateLimiter | None = None,
        max_in_flight: int = 4,
        transport: Callable[[str, dict, dict, float], tuple[int, str]] | None = None,
        sleep: Callable[[float], None] = time.sleep,
        clock: Callable[[], float] = time.monotonic,
        rng=None,
    ) -> None:
        self.base_url = base_url.rstrip("/")
        self.ledger = ledger
        self._api_key = api_key
        self.retry = retry or RetryPolicy()
        self.rate_limiter = rate_limiter or RateLimiter(None)
        self._in_flight = threading.BoundedSemaphore(max_in_flight)
        self._transport = transport or _requests_transport
        self._sleep = sleep
        self._clock = clock
        self._rng = rng if rng is not None else random.Random()

    def _headers(self) -> dict:
        key = self._api_key if self._api_key is not None else os.environ.get(API_KEY_ENV, "")
        if not key:
            raise PermanentError(
                f"no API key: set the {API_KEY_ENV} environment variable or pass api_key"
            )
        return {"Authorization": f"Bearer {key}", "Content-Type": "application/json"}

    def _classify_status(self, status: int, body: str) -> BackendError | None:
        if status == 200:
            return None
        snippet = body[:200]
        if status == 429 or 500 <= status <= 599:
            return TransientError(f"HTTP {status}: {snippet}", status=status)
        if 400 <= status <= 499:
            return PermanentError(f"HTTP {status}: {snippet}", status=status)
        return MalformedResponseError(f"unexpected HTTP status {status}: {snippet}")

    def _request(self, path: str, payload: dict, timeout: float) -> tuple[dict, int]:
        """POST with retries; returns (parsed body, attempts used)."""
        url = f"{self.base_url}{path}"
        headers = self._headers()
        attempt = 0
        while True:
            attempt += 1
            try:
                self.rate_limiter.acquire()
                with self._in_flight:
                    status, body = self._transport(url, payload, headers, timeout)
                error = self._classify_status(status, body)
                if error is not None:
                    raise error
                try:
                    parsed = json.loads(body)
                except json.JSONDecodeError as exc:
                    raise MalformedResponseError(f"response body is not JSON: {body[:200]}") from exc
                if not isinstance(parsed, dict):
                    raise MalformedResponseError("response body is not a JSON object")
                return parsed, attempt
            except TransientError as exc:
                if attempt >= self.retry.max_attempts:
                    exc.attempts = attempt
                    raise
                self._sleep(self.retry.delay_before_retry(attempt, self._rng))


class OpenAIChatBackend(_HttpBackendBase):
    def complete(
        self, messages: Sequence[ChatMessage], params: CompletionParams
    ) -> tuple[str, BackendCall]:
        _check_messages(messages)
        payload = {
            "model": params.model,
            "messages": [{"role": m.role, "content": m.content} for m in messages],
            "temperature": params.temperature,
            "max_tokens": params.max_tokens,
        }
        start = self._clock()
        body, attempts = self._request("/chat/completions", payload, params.request_timeout)
        try:
            content = body["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise MalformedResponseError(f"missing choices[0].message.content: {exc}") from exc
        if not isinstance(content, str):
            raise MalformedResponseError("completion content is not a string")
        text = content.rstrip()
        usage = body.get("usage") or {}
        call = BackendCall(
            kind="chat",
            request_digest=messages_digest(messages),
            response_digest=text_digest(text),
            latency=self._clock() - start,
            prompt_tokens=int(usage.get("prompt_tokens", 0)),
            completion_tokens=int(usage.get("completion_tokens", 0)),
            attempt_count=attempts,
        )
        self.ledger.record(call)
        return text, call


class OpenAIEmbeddingBackend(_HttpBackendBase):
    def __init__(self, base_url: str, model: str, *, request_timeout: float = 60.0, **kwargs):
        super().__init__(base_url, **kwargs)
        self.model = model
        self.request_timeout = request_timeout

    def embed(self, text: str) -> EmbeddingVector:
        if not text.strip():
            raise ValueError("cannot embed empty text")
        payload = {"model": self.model, "input": text}
        start = self._clock()
        body, attempts = self._request("/embeddings", payload, self.request_timeout)
        try:
            values = body["data"][0]["embedding"]
        except (KeyError, IndexError, TypeError) as exc:
            raise MalformedResponseError(f"missing data[0].embedding: {exc}") from exc
        if not isinstance(values, list) or not values:
            raise MalformedResponseError("embedding is not a non-empty list")
        vector = _normalized(values)
        usage = body.get("usage") or {}
        self.ledger.record(
            BackendCall(
                kind="embed",
                request_digest=text_digest(text),
                response_digest=text_digest(",".join(f"{v:.8f}" for v in vector.values)),
                latency=self._clock() - start,
                prompt_tokens=int(usage.get("prompt_tokens", 0)),
                completion_tokens=0,
                attempt_count=attempts,
            )
        )
        return vector


def _normalized(values: Iterable[float]) -> EmbeddingVector:
    values = [float(v) for v in values]
    norm = math.sqrt(math.fsum(v * v for v in values))
    if norm == 0.0:
        raise MalformedResponseError("embedding has zero norm")
    return EmbeddingVector(tuple(v / norm for v in values))


def _check_messages(messages: Sequence[ChatMessage]) -> None:
    if not messages:
        raise ValueError("messages must be non-empty")
    if messages[-1].role != "user":
        raise ValueError("last message must have role user")


class CrashSwitch:
    """Raises SimulatedCrashError once a shared logical-call budget is spent."""

    def __init__(self, after_calls: int) -> None:
        self._remaining = after_calls
        self._lock = threading.Lock()

    def tick(self) -> None:
        with self._lock:
            if self._remaining <= 0:
                raise SimulatedCrashError("injected crash: call budget exhausted")
            self._remaining -= 1


class TranscriptChatBackend:
    """Replays responses keyed by the SHA-256 digest of the message list.

    An unmatched digest is an error, which guarantees that tests exercise
    byte-exact prompts. The transcript file is JSONL with fields
    ``digest`` and ``response``.
    """

    def __init__(
        self,
        transcript: dict[str, str],
        *,
        ledger: CallLedger,
        crash_switch: CrashSwitch | None = None,
    ) -> None:
        self.transcript = dict(transcript)
        self.ledger = ledger
        self._crash = crash_switch

    @classmethod
    def from_file(cls, path: str | Path, *, ledger: CallLedger, crash_switch=None):
        transcript: dict[str, str] = {}
        with Path(path).open("r", encoding="utf-8") as fh:
            for line in fh:
                if not line.strip():
                    continue
                record = json.loads(line)
                transcript[record["digest"]] = record["response"]
        return cls(transcript, ledger=ledger, crash_switch=crash_switch)

    @staticmethod
    def save_transcript(transcript: dict[str, str], path: str | Path) -> None:
        with Path(path).open("w", encoding="utf-8") as fh:
            for digest in sorted(transcript):
                fh.write(
                    json.dumps(
                        {"digest": digest, "response": transcript[digest]}, ensure_ascii=False
                    )
                    + "\n"
                )

    def add(self, messages: Sequence[ChatMessage], response: str) -> str:
        digest = messages_digest(messages)
        self.transcript[digest] = response
        return digest

    def complete(
        self, messages: Sequence[ChatMessage], params: CompletionParams
    ) -> tuple[str, BackendCall]:
        _check_messages(messages)
        if self._crash is not None:
            self._crash.tick()
        digest = messages_digest(messages)
        if digest not in self.transcript:
            raise PermanentError(f"no transcript entry for message digest {digest[:16]}...")
        text = self.transcript[digest].rstrip()
        call = BackendCall(
            kind="chat",
            request_digest=digest,
            response_digest=text_digest(text),
            latency=0.0,
            prompt_tokens=sum(len(m.content.split()) for m in messages),
            completion_tokens=len(text.split()),
            attempt_count=1,
        )
        self.ledger.record(call)
        return text, call


_TOKEN_SPLIT = re.compile(r"[\W_]+", re.UNICODE)


def hashed_tokens(text: str) -> list[str]:
    """Lowercase and split on runs of non-alphanumerics (underscores included)."""
    tokens = [t for t in _TOKEN_SPLIT.split(text.lower()) if t]
    return tokens if tokens else [text.strip().lower()]


def token_bucket(token: str, dim: int = EMBED_DIM) -> int:
    return int.from_bytes(hashlib.sha256(token.encode("utf-8")).digest()[:8], "big") % dim


class HashedTokenEmbedder:
    """Deterministic test embedder: hashed token counts, L2-normalized.

    A pure function of the input string; texts sharing tokens get higher
    cosine similarity, token-disjoint texts are orthogonal up to bucket
    collisions.
    """

    def __init__(
        self,
        dim: int = EMBED_DIM,
        *,
        ledger: CallLedger,
        crash_switch: CrashSwitch | None = None,
    ) -> None:
        self.dim = dim
        self.ledger = ledger
        self._crash = crash_switch

    def embed(self, text: str) -> EmbeddingVector:
        if not text.strip():
            raise ValueError("cannot embed empty text")
        if self._crash is not None:
            self._crash.tick()
        tokens = hashed_tokens(text)
        counts = [0.0] * self.dim
        for token in tokens:
            counts[token_bucket(token, self.dim)] += 1.0
        vector = _normalized(counts)
        self.ledger.record(
            BackendCall(
                kind="embed",
                request_digest=text_digest(text),
                response_digest=text_digest(",".join(f"{v:.8f}" for v in vector.values)),
                latency=0.0,
                prompt_tokens=len(tokens),
                completion_tokens=0,
                attempt_count=1,
            )
        )
        return vector


@dataclass
class Backends:
    """The backend bundle handed through the pipeline: chat + embeddings + audit."""

    chat: ChatBackend
    embedder: Embedder
    ledger: CallLedger = field(default_factory=CallLedger)

    @classmethod
    def offline(
        cls,
        transcript: dict[str, str] | str | Path,
        *,
        crash_after_calls: int | None = None,
        embed_dim: int = EMBED_DIM,
    ) -> "Backends":
        """Deterministic offline bundle: transcript chat + hashed-token embeddings."""
        ledger = CallLedger()
        switch = CrashSwitch(crash_after_calls) if crash_after_calls is not None else None
        if isinstance(transcript, (str, Path)):
            chat = TranscriptChatBackend.from_file(transcript, ledger=ledger, crash_switch=switch)
        else:
            chat = TranscriptChatBackend(transcript, ledger=ledger, crash_switch=switch)
        embedder = HashedTokenEmbedder(embed_dim, ledger=ledger, crash_switch=switch)
        return cls(chat=chat, embedder=embedder, ledger=ledger)
