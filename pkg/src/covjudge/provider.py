"""Chat-completion clients: an OpenAI-compatible HTTP provider and a seeded mock.

Token usage is always taken from the response envelope; nothing in this module
(or anywhere else) estimates token counts locally.
"""

from __future__ import annotations

import hashlib
import json
import os
import random
import threading
import time
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Sequence

import httpx

DEFAULT_TIMEOUT = 120.0


class ModelFamily(str, Enum):
    GPT4 = "gpt4-class"
    GPT5 = "gpt5-class"
    OPEN_WEIGHT = "open-weight"
    MOCK = "mock"


# families whose endpoints accept a reasoning-effort knob
REASONING_FAMILIES = (ModelFamily.GPT5, ModelFamily.OPEN_WEIGHT)


class ReasoningEffort(str, Enum):
    NONE = "none"
    LOW = "low"
    MEDIUM = "medium"
    HIGH = "high"


class Role(str, Enum):
    SYSTEM = "system"
    USER = "user"


class ProviderErrorKind(str, Enum):
    TIMEOUT = "timeout"
    RATE_LIMITED = "rate_limited"
    TRANSPORT = "transport"
    SERVER = "server"
    MALFORMED_ENVELOPE = "malformed_envelope"


class ProviderError(Exception):
    def __init__(self, kind: ProviderErrorKind, detail: str = "",
                 retry_after: float | None = None):
        super().__init__(f"{kind.value}: {detail}" if detail else kind.value)
        self.kind = kind
        self.detail = detail
        self.retry_after = retry_after


class ProviderAuthError(Exception):
    """Raised before any network activity when the auth secret is unavailable."""


@dataclass(frozen=True)
class MockSettings:
    failure_rate: float = 0.0
    seed: int | None = None
    delay: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.failure_rate <= 1.0:
            raise ValueError(f"failure_rate out of range [0, 1]: {self.failure_rate}")


@dataclass(frozen=True)
class ModelConfig:
    id: str
    family: ModelFamily
    model_name: str
    reasoning_effort: ReasoningEffort = ReasoningEffort.NONE
    prompt_rate: float = 0.0      # USD per million prompt tokens
    completion_rate: float = 0.0  # USD per million completion tokens
    endpoint: str = ""
    auth_env_var: str = ""
    temperature: float | None = None
    structured_output: bool = False
    mock: MockSettings | None = None

    def __post_init__(self):
        if self.prompt_rate < 0 or self.completion_rate < 0:
            raise ValueError(f"{self.id}: pricing rates must be >= 0")
        if (self.reasoning_effort is ReasoningEffort.NONE
                and self.family in REASONING_FAMILIES):
            raise ValueError(
                f"{self.id}: {self.family.value} models require a reasoning effort"
            )


@dataclass(frozen=True)
class Message:
    role: Role
    content: str


@dataclass(frozen=True)
class ChatRequest:
    messages: tuple[Message, ...]
    structured_output: bool = False
    reasoning_effort: ReasoningEffort | None = None

    def __post_init__(self):
        system = [m for m in self.messages if m.role is Role.SYSTEM]
        users = [m for m in self.messages if m.role is Role.USER]
        if len(system) != 1:
            raise ValueError("request must carry exactly one system message")
        if not users:
            raise ValueError("request must carry at least one user message")

    @property
    def system_text(self) -> str:
        return next(m.content for m in self.messages if m.role is Role.SYSTEM)

    @property
    def user_text(self) -> str:
        return next(m.content for m in self.messages if m.role is Role.USER)


@dataclass(frozen=True)
class ChatResponse:
    content: str
    prompt_tokens: int
    completion_tokens: int
    latency: float  # seconds


class HttpProvider:
    """OpenAI-compatible chat-completions client (single POST per call)."""

    def __init__(self, timeout: float = DEFAULT_TIMEOUT,
                 transport: httpx.BaseTransport | None = None):
        self.timeout = timeout
        self._client = httpx.Client(timeout=timeout, transport=transport)

    def close(self) -> None:
        self._client.close()

    def complete(self, config: ModelConfig, request: ChatRequest) -> ChatResponse:
        token = os.environ.get(config.auth_env_var, "")
        if not token:
            raise ProviderAuthError(
                f"{config.id}: environment variable '{config.auth_env_var}' is not set"
            )
        payload: dict = {
            "model": config.model_name,
            "messages": [{"role": m.role.value, "content": m.content}
                         for m in request.messages],
        }
        if config.family in REASONING_FAMILIES:
            effort = request.reasoning_effort or config.reasoning_effort
            payload["reasoning_effort"] = effort.value
        elif config.family is ModelFamily.GPT4:
            payload["temperature"] = config.temperature if config.temperature is not None else 0.0
        if config.temperature is not None and "temperature" not in payload:
            payload["temperature"] = config.temperature
        if request.structured_output:
            payload["response_format"] = {"type": "json_object"}

        url = config.endpoint.rstrip("/") + "/chat/completions"
        started = time.perf_counter()
        try:
            resp = self._client.post(
                url, json=payload, headers={"Authorization": f"Bearer {token}"}
            )
        except httpx.TimeoutException as exc:
            raise ProviderError(ProviderErrorKind.TIMEOUT, str(exc)) from exc
        except httpx.HTTPError as exc:
            raise ProviderError(ProviderErrorKind.TRANSPORT, str(exc)) from exc
        latency = time.perf_counter() - started

        if resp.status_code == 429:
            raise ProviderError(
                ProviderErrorKind.RATE_LIMITED,
                resp.text[:500],
                retry_after=_parse_retry_after(resp.headers.get("Retry-After")),
            )
        if resp.status_code >= 500:
            raise ProviderError(
                ProviderErrorKind.SERVER, f"HTTP {resp.status_code}: {resp.text[:500]}"
            )
        if resp.status_code >= 400:
            raise ProviderError(
                ProviderErrorKind.TRANSPORT, f"HTTP {resp.status_code}: {resp.text[:500]}"
            )
        return _decode_envelope(resp, latency)


def _parse_retry_after(value: str | None) -> float | None:
    if value is None:
        return None
    try:
        return max(0.0, float(value))
    except ValueError:
        return None


def _decode_envelope(resp: httpx.Response, latency: float) -> ChatResponse:
    try:
        data = resp.json()
        content = data["choices"][0]["message"]["content"]
        usage = data["usage"]
        prompt_tokens = int(usage["prompt_tokens"])
        completion_tokens = int(usage["completion_tokens"])
    except (ValueError, KeyError, IndexError, TypeError) as exc:
        raise ProviderError(
            ProviderErrorKind.MALFORMED_ENVELOPE,
            f"unusable response envelope: {resp.text[:500]}",
        ) from exc
    if not isinstance(content, str) or not content:
        raise ProviderError(
            ProviderErrorKind.MALFORMED_ENVELOPE, "envelope carries empty content"
        )
    if prompt_tokens < 0 or completion_tokens < 0:
        raise ProviderError(
            ProviderErrorKind.MALFORMED_ENVELOPE, "negative token counts in envelope"
        )
    return ChatResponse(
        content=content,
        prompt_tokens=prompt_tokens,
        completion_tokens=completion_tokens,
        latency=latency,
    )


# --- mock provider -----------------------------------------------------------

# failure kinds the mock can inject; the first three surface as provider
# exceptions, the last two as well-formed responses with unusable content
PROVIDER_FAILURES = ("timeout", "rate_limited", "transport", "server", "malformed_envelope")
CONTENT_FAILURES = ("malformed_json", "schema_violation")

DEFAULT_FAILURE_KINDS: dict[str, float] = {
    "malformed_json": 3.0,
    "schema_violation": 2.0,
    "timeout": 1.0,
}

_MALFORMED_CONTENT = (
    "I'm sorry, I could not format the assessment as JSON this time. "
    "The coverage looked adequate overall but please retry."
)
_SCHEMA_VIOLATION_CONTENT = json.dumps({
    "covered": ["happy path"],
    "gaps": [],
    "recommendations": [],
    "rubric_flags": {},
})


def default_verdict_factory(request: ChatRequest, salt: str = "") -> str:
    """Valid verdict derived solely from the prompt content (plus a salt).

    Deriving everything from a digest of the user message makes the verdict
    for a given (ticket, config) pair independent of call ordering, so
    concurrent and resumed runs agree byte-for-byte. The salt decorrelates
    verdict streams of mock providers that see identical prompts.
    """
    digest = hashlib.sha256((salt + "\x00" + request.user_text).encode("utf-8")).digest()
    coverage = int.from_bytes(digest[0:4], "big") % 101
    n_covered = 1 + digest[4] % 3
    n_gaps = digest[5] % 3
    flags = {}
    for i, key in enumerate(("scenario_completeness", "acceptance_criteria_alignment",
                             "http_method_specific_concerns", "assertion_quality")):
        flags[key] = bool(digest[6 + i] & 1)
    doc = {
        "coverage_percentage": coverage,
        "covered": [f"scenario group {i + 1}" for i in range(n_covered)],
        "gaps": [f"missing case {i + 1}" for i in range(n_gaps)],
        "recommendations": ["tighten assertions"] if digest[10] & 1 else [],
        "rubric_flags": flags,
    }
    return json.dumps(doc)


def _mock_usage(request: ChatRequest, content: str) -> tuple[int, int]:
    prompt_tokens = max(1, (len(request.system_text) + len(request.user_text)) // 4)
    completion_tokens = max(1, len(content) // 4)
    return prompt_tokens, completion_tokens


class MockProvider:
    """Deterministic provider: scripted outcomes first, then seeded failures.

    Outcome i is fully determined by (script, seed, i); calls are counted
    under a lock so the provider is safe for concurrent use.
    """

    def __init__(
        self,
        script: Sequence[str | ChatResponse | ProviderError] = (),
        seed: int = 0,
        failure_rate: float = 0.0,
        failure_kinds: dict[str, float] | None = None,
        verdict_factory: Callable[[ChatRequest], str] | None = None,
        verdict_salt: str = "",
        delay: float = 0.0,
    ):
        if not 0.0 <= failure_rate <= 1.0:
            raise ValueError(f"failure_rate out of range [0, 1]: {failure_rate}")
        self.script = list(script)
        self.failure_rate = failure_rate
        kinds = failure_kinds or DEFAULT_FAILURE_KINDS
        if not kinds:
            raise ValueError("failure_kinds must not be empty")
        self._kind_names = list(kinds)
        self._kind_weights = [float(kinds[k]) for k in self._kind_names]
        if verdict_factory is None:
            verdict_factory = lambda request: default_verdict_factory(request, verdict_salt)
        self.verdict_factory = verdict_factory
        self.delay = delay
        self._rng = random.Random(seed)
        self._calls = 0
        self._lock = threading.Lock()

    @property
    def calls(self) -> int:
        return self._calls

    def _next_outcome(self) -> str | ChatResponse | ProviderError:
        with self._lock:
            index = self._calls
            self._calls += 1
            if index < len(self.script):
                return self.script[index]
            if self.failure_rate > 0.0 and self._rng.random() < self.failure_rate:
                return self._rng.choices(self._kind_names, self._kind_weights)[0]
            return "success"

    def complete(self, config: ModelConfig, request: ChatRequest) -> ChatResponse:
        outcome = self._next_outcome()
        if self.delay > 0.0:
            time.sleep(self.delay)
        if isinstance(outcome, ChatResponse):
            return outcome
        if isinstance(outcome, ProviderError):
            raise outcome
        return self._materialize(outcome, request)

    def _materialize(self, kind: str, request: ChatRequest) -> ChatResponse:
        if kind == "success":
            content = self.verdict_factory(request)
        elif kind == "malformed_json":
            content = _MALFORMED_CONTENT
        elif kind == "schema_violation":
            content = _SCHEMA_VIOLATION_CONTENT
        elif kind in PROVIDER_FAILURES:
            raise ProviderError(ProviderErrorKind(kind), "injected by mock",
                                retry_after=0.0 if kind == "rate_limited" else None)
        else:
            raise ValueError(f"unknown mock outcome '{kind}'")
        prompt_tokens, completion_tokens = _mock_usage(request, content)
        return ChatResponse(
            content=content,
            prompt_tokens=prompt_tokens,
            completion_tokens=completion_tokens,
            latency=self.delay,
        )


def make_mock(
    script: Sequence[str | ChatResponse | ProviderError] = (),
    seed: int = 0,
    failure_rate: float = 0.0,
    failure_kinds: dict[str, float] | None = None,
    **kwargs,
) -> MockProvider:
    return MockProvider(script=script, seed=seed, failure_rate=failure_rate,
                        failure_kinds=failure_kinds, **kwargs)


def derive_seed(base_seed: int, config_id: str) -> int:
    """Stable per-config seed so mock streams decorrelate across configs."""
    digest = hashlib.sha256(f"{base_seed}:{config_id}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


def provider_for(config: ModelConfig, base_seed: int = 0,
                 timeout: float = DEFAULT_TIMEOUT):
    """Build the provider handle a config calls for (mock or HTTP)."""
    if config.family is ModelFamily.MOCK:
        settings = config.mock or MockSettings()
        seed = settings.seed if settings.seed is not None else derive_seed(base_seed, config.id)
        return MockProvider(seed=seed, failure_rate=settings.failure_rate,
                            verdict_salt=config.id, delay=settings.delay)
    return HttpProvider(timeout=timeout)


def check_auth(config: ModelConfig) -> None:
    """Fail fast when a live config's auth secret is missing."""
    if config.family is ModelFamily.MOCK:
        return
    if not config.auth_env_var or not os.environ.get(config.auth_env_var):
        raise ProviderAuthError(
            f"{config.id}: environment variable '{config.auth_env_var or '<unset>'}' is not set"
        )
