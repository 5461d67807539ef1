"""Chat-completion backends behind one request/response contract."""

from __future__ import annotations

import enum
import json
import logging
import os
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Protocol

import httpx

log = logging.getLogger(__name__)


class Role(str, enum.Enum):
    BUILDER = "builder"
    STRUCTURAL_CRITIC = "structural_critic"
    SPAN_RETRIEVER = "span_retriever"
    VERBALIZER = "verbalizer"
    SEMANTIC_JUDGE = "semantic_judge"
    REFINER = "refiner"


@dataclass(frozen=True)
class AgentRequest:
    role: Role
    prompt: str
    temperature: float = 0.0
    max_tokens: int = 2048


@dataclass(frozen=True)
class AgentResponse:
    text: str
    prompt_tokens: int = 0
    completion_tokens: int = 0
    latency_ms: int = 0

    def __post_init__(self):
        if self.prompt_tokens < 0 or self.completion_tokens < 0:
            raise ValueError("token usage must be non-negative")


class BackendError(RuntimeError):
    def __init__(self, message: str, retryable: bool = False, attempts: int = 1):
        super().__init__(message)
        self.retryable = retryable
        self.attempts = attempts


class Backend(Protocol):
    def complete(self, request: AgentRequest) -> AgentResponse: ...


@dataclass
class BackendConfig:
    endpoint: str = "https://api.openai.com/v1/chat/completions"
    model: str = "gpt-4o"
    api_key_env: str = "PROCFLOW_API_KEY"
    timeout: float = 60.0
    retries: int = 3
    backoff: float = 1.0


class HttpBackend:
    """OpenAI-style ``/chat/completions`` client.

    Timeouts, connection failures, 429 and 5xx are retried ``retries`` times
    with exponential backoff; other HTTP errors fail immediately.
    """

    def __init__(self, config: BackendConfig = BackendConfig(), client: Optional[httpx.Client] = None,
                 sleep: Callable[[float], None] = time.sleep):
        self.config = config
        self.client = client or httpx.Client(timeout=config.timeout)
        self.sleep = sleep

    def _headers(self) -> dict:
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(self.config.api_key_env)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        return headers

    def complete(self, request: AgentRequest) -> AgentResponse:
        body = {
            "model": self.config.model,
            "messages": [{"role": "user", "content": request.prompt}],
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        }
        attempts = self.config.retries + 1
        last = "no attempt made"
        for attempt in range(1, attempts + 1):
            t0 = time.monotonic()
            try:
                resp = self.client.post(self.config.endpoint, json=body, headers=self._headers(),
                                        timeout=self.config.timeout)
            except httpx.TransportError as exc:
                last = f"{type(exc).__name__}: {exc}"
            else:
                if resp.status_code == 200:
                    return self._parse(resp, int((time.monotonic() - t0) * 1000), attempt)
                last = f"HTTP {resp.status_code}: {resp.text[:200]}"
                if resp.status_code != 429 and resp.status_code < 500:
                    raise BackendError(last, retryable=False, attempts=attempt)
            log.warning("%s request failed (attempt %d/%d): %s", request.role.value, attempt, attempts, last)
            if attempt < attempts:
                self.sleep(self.config.backoff * 2 ** (attempt - 1))
        raise BackendError(f"giving up after {attempts} attempts: {last}", retryable=True, attempts=attempts)

    @staticmethod
    def _parse(resp: httpx.Response, latency_ms: int, attempt: int) -> AgentResponse:
        try:
            data = resp.json()
            text = data["choices"][0]["message"]["content"] or ""
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise BackendError(f"malformed completion payload: {exc}", attempts=attempt) from None
        usage = data.get("usage") or {}
        return AgentResponse(text, int(usage.get("prompt_tokens", 0)),
                             int(usage.get("completion_tokens", 0)), latency_ms)


@dataclass
class TranscriptEntry:
    role: str
    prompt: str
    response: str
    prompt_tokens: int
    completion_tokens: int
    latency_ms: int
    error: Optional[str] = None

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Transcript:
    entries: list = field(default_factory=list)

    def record(self, entry: TranscriptEntry):
        self.entries.append(entry)

    def usage(self) -> tuple[int, int]:
        return (sum(e.prompt_tokens for e in self.entries),
                sum(e.completion_tokens for e in self.entries))

    def dump(self, fp) -> None:
        for e in self.entries:
            fp.write(json.dumps(e.to_dict(), ensure_ascii=False) + "\n")
