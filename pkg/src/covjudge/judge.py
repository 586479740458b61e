"""Evaluation orchestration: prompt, call, validate, retry, record.

An attempt "succeeds" only when the raw response yields a verdict that passes
schema and range validation; there is no model-based repair, so the attempt
statuses are an uncontaminated reliability signal.
"""

from __future__ import annotations

import hashlib
import json
import random
import re
import time
from concurrent.futures import FIRST_COMPLETED, ThreadPoolExecutor, wait
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable

from .corpus import Corpus, CorpusItem
from .prompt import (
    DEFAULT_GUIDELINES,
    DEFAULT_RUBRIC,
    Guidelines,
    PromptPair,
    Rubric,
    build_prompt_pair,
    slug,
)
from .provider import (
    ChatRequest,
    Message,
    ModelConfig,
    ProviderError,
    ProviderErrorKind,
    REASONING_FAMILIES,
    ReasoningEffort,
    Role,
    provider_for,
)

RAW_EXCERPT_LIMIT = 2000


class VerdictError(ValueError):
    pass


class VerdictParseError(VerdictError):
    """No well-formed JSON document could be extracted from the response."""


class VerdictSchemaError(VerdictError):
    """A document was found but a required field is missing, mistyped or out of range."""


class AttemptStatus(str, Enum):
    SUCCESS = "success"
    PARSE_ERROR = "parse_error"
    SCHEMA_ERROR = "schema_error"
    TIMEOUT = "timeout"
    RATE_LIMITED = "rate_limited"
    TRANSPORT_ERROR = "transport_error"
    SERVER_ERROR = "server_error"


FAILURE_STATUSES = frozenset(s for s in AttemptStatus if s is not AttemptStatus.SUCCESS)

# provider-level failures mapped onto the attempt taxonomy; a malformed
# envelope is indistinguishable from unparseable output downstream
_STATUS_BY_PROVIDER_KIND = {
    ProviderErrorKind.TIMEOUT: AttemptStatus.TIMEOUT,
    ProviderErrorKind.RATE_LIMITED: AttemptStatus.RATE_LIMITED,
    ProviderErrorKind.TRANSPORT: AttemptStatus.TRANSPORT_ERROR,
    ProviderErrorKind.SERVER: AttemptStatus.SERVER_ERROR,
    ProviderErrorKind.MALFORMED_ENVELOPE: AttemptStatus.PARSE_ERROR,
}

_NETWORK_KINDS = (
    ProviderErrorKind.TIMEOUT,
    ProviderErrorKind.RATE_LIMITED,
    ProviderErrorKind.TRANSPORT,
    ProviderErrorKind.SERVER,
)


@dataclass(frozen=True)
class JudgeVerdict:
    coverage_percentage: float
    covered: tuple[str, ...]
    gaps: tuple[str, ...]
    recommendations: tuple[str, ...]
    rubric_flags: dict[str, bool]

    def __post_init__(self):
        if not 0.0 <= self.coverage_percentage <= 100.0:
            raise VerdictSchemaError(
                f"coverage_percentage out of range [0, 100]: {self.coverage_percentage}"
            )


@dataclass(frozen=True)
class AttemptRecord:
    index: int  # 1-based
    status: AttemptStatus
    prompt_tokens: int
    completion_tokens: int
    latency: float
    raw_excerpt: str


@dataclass(frozen=True)
class EvaluationRecord:
    ticket_id: str
    config_id: str
    run_index: int  # 1-based
    attempts: tuple[AttemptRecord, ...]
    verdict: JudgeVerdict | None
    first_attempt_success: bool
    completed: bool
    prompt_hash: str

    def __post_init__(self):
        if not self.attempts:
            raise ValueError("evaluation record without attempts")
        if self.first_attempt_success != (self.attempts[0].status is AttemptStatus.SUCCESS):
            raise ValueError("first_attempt_success inconsistent with attempt 1")
        if self.completed != (self.verdict is not None):
            raise ValueError("completed flag inconsistent with verdict presence")
        successes = [a for a in self.attempts if a.status is AttemptStatus.SUCCESS]
        if len(successes) > 1 or (successes and self.attempts[-1].status is not AttemptStatus.SUCCESS):
            raise ValueError("success must be unique and final")

    @property
    def key(self) -> tuple[str, str, int]:
        return (self.ticket_id, self.config_id, self.run_index)


@dataclass(frozen=True)
class RetryPolicy:
    max_attempts: int = 5
    backoff_base: float = 1.0
    backoff_multiplier: float = 2.0
    jitter: bool = True
    retry_on: frozenset[AttemptStatus] = FAILURE_STATUSES

    def __post_init__(self):
        if self.max_attempts < 1:
            raise ValueError("max_attempts must be >= 1")
        if AttemptStatus.SUCCESS in self.retry_on:
            raise ValueError("success is never retried")

    def backoff(self, attempt_index: int, rng: random.Random) -> float:
        delay = self.backoff_base * self.backoff_multiplier ** (attempt_index - 1)
        if self.jitter:
            return rng.uniform(0.0, delay)
        return delay


DEFAULT_RETRY_POLICY = RetryPolicy()


# --- verdict extraction and validation --------------------------------------

_FENCE_RE = re.compile(r"```(?:[A-Za-z0-9_-]+)?\s*\n(.*?)```", re.DOTALL)


def _balanced_spans(text: str):
    """Yield candidate brace-balanced spans, honoring strings and escapes."""
    start = text.find("{")
    while start != -1:
        depth = 0
        in_string = False
        escaped = False
        for i in range(start, len(text)):
            ch = text[i]
            if in_string:
                if escaped:
                    escaped = False
                elif ch == "\\":
                    escaped = True
                elif ch == '"':
                    in_string = False
                continue
            if ch == '"':
                in_string = True
            elif ch == "{":
                depth += 1
            elif ch == "}":
                depth -= 1
                if depth == 0:
                    yield text[start:i + 1]
                    break
        start = text.find("{", start + 1)


def extract_document(raw: str) -> dict:
    """First JSON object in raw text, preferring fenced code blocks."""
    candidates = []
    for match in _FENCE_RE.finditer(raw):
        candidates.append(match.group(1))
    candidates.append(raw)
    for region in candidates:
        for span in _balanced_spans(region):
            try:
                document = json.loads(span)
            except json.JSONDecodeError:
                continue
            if isinstance(document, dict):
                return document
    raise VerdictParseError("no JSON object found in response")


def parse_verdict(raw: str, rubric: Rubric = DEFAULT_RUBRIC) -> JudgeVerdict:
    """Extract and validate a coverage verdict from raw judge output."""
    document = extract_document(raw)

    for key in ("coverage_percentage", "covered", "gaps", "recommendations", "rubric_flags"):
        if key not in document:
            raise VerdictSchemaError(f"missing required field '{key}'")

    coverage = document["coverage_percentage"]
    if isinstance(coverage, bool) or not isinstance(coverage, (int, float)):
        raise VerdictSchemaError("coverage_percentage is not a number")
    if not 0.0 <= coverage <= 100.0:
        raise VerdictSchemaError(f"coverage_percentage out of range [0, 100]: {coverage}")

    lists: dict[str, tuple[str, ...]] = {}
    for key in ("covered", "gaps", "recommendations"):
        value = document[key]
        if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
            raise VerdictSchemaError(f"field '{key}' must be a list of strings")
        lists[key] = tuple(value)

    raw_flags = document["rubric_flags"]
    if not isinstance(raw_flags, dict):
        raise VerdictSchemaError("rubric_flags must be an object")
    valid_keys = set(rubric.flag_keys())
    flags: dict[str, bool] = {}
    for name, value in raw_flags.items():
        key = slug(str(name))
        if key not in valid_keys:
            raise VerdictSchemaError(f"rubric_flags key '{name}' is not a rubric dimension")
        if not isinstance(value, bool):
            raise VerdictSchemaError(f"rubric_flags['{name}'] must be a boolean")
        flags[key] = value

    return JudgeVerdict(
        coverage_percentage=float(coverage),
        covered=lists["covered"],
        gaps=lists["gaps"],
        recommendations=lists["recommendations"],
        rubric_flags=flags,
    )


# --- evaluation --------------------------------------------------------------

def prompt_digest(pair: PromptPair) -> str:
    payload = pair.system_text.encode("utf-8") + b"\x00" + pair.user_text.encode("utf-8")
    return hashlib.sha256(payload).hexdigest()


def build_request(config: ModelConfig, pair: PromptPair) -> ChatRequest:
    effort: ReasoningEffort | None = None
    if config.family in REASONING_FAMILIES:
        effort = config.reasoning_effort
    return ChatRequest(
        messages=(
            Message(Role.SYSTEM, pair.system_text),
            Message(Role.USER, pair.user_text),
        ),
        structured_output=config.structured_output,
        reasoning_effort=effort,
    )


def evaluate_item(
    provider,
    config: ModelConfig,
    item: CorpusItem,
    policy: RetryPolicy = DEFAULT_RETRY_POLICY,
    run_index: int = 1,
    rubric: Rubric = DEFAULT_RUBRIC,
    guidelines: Guidelines = DEFAULT_GUIDELINES,
    prompt_pair: PromptPair | None = None,
    sleep: Callable[[float], None] = time.sleep,
    rng: random.Random | None = None,
) -> EvaluationRecord:
    """Run one (item, config, run) cell to success or retry exhaustion.

    Never raises for attempt failures; exhaustion yields completed=False.
    """
    if prompt_pair is None:
        prompt_pair = build_prompt_pair(item.ticket, item.gherkin_source, rubric, guidelines)
    request = build_request(config, prompt_pair)
    rng = rng or random.Random()

    attempts: list[AttemptRecord] = []
    verdict: JudgeVerdict | None = None
    for attempt_index in range(1, policy.max_attempts + 1):
        retry_after: float | None = None
        try:
            response = provider.complete(config, request)
        except ProviderError as exc:
            status = _STATUS_BY_PROVIDER_KIND[exc.kind]
            excerpt = "" if exc.kind in _NETWORK_KINDS else exc.detail[:RAW_EXCERPT_LIMIT]
            attempts.append(AttemptRecord(
                index=attempt_index, status=status,
                prompt_tokens=0, completion_tokens=0,
                latency=0.0, raw_excerpt=excerpt,
            ))
            retry_after = exc.retry_after
        else:
            try:
                verdict = parse_verdict(response.content, rubric)
                status = AttemptStatus.SUCCESS
            except VerdictSchemaError:
                status = AttemptStatus.SCHEMA_ERROR
            except VerdictParseError:
                status = AttemptStatus.PARSE_ERROR
            attempts.append(AttemptRecord(
                index=attempt_index, status=status,
                prompt_tokens=response.prompt_tokens,
                completion_tokens=response.completion_tokens,
                latency=response.latency,
                raw_excerpt=response.content[:RAW_EXCERPT_LIMIT],
            ))
        if status is AttemptStatus.SUCCESS:
            break
        if status not in policy.retry_on:
            break
        if attempt_index < policy.max_attempts:
            # an endpoint-provided retry-after supersedes the backoff schedule
            delay = retry_after if retry_after is not None else policy.backoff(attempt_index, rng)
            if delay > 0:
                sleep(delay)

    return EvaluationRecord(
        ticket_id=item.ticket.id,
        config_id=config.id,
        run_index=run_index,
        attempts=tuple(attempts),
        verdict=verdict,
        first_attempt_success=attempts[0].status is AttemptStatus.SUCCESS,
        completed=verdict is not None,
        prompt_hash=prompt_digest(prompt_pair),
    )


@dataclass
class RunSummary:
    records_written: int
    skipped: int
    failures: int  # records that exhausted retries without a verdict
    wall_time: float
    planned: int = 0
    first_attempt_successes: int = 0


def plan_keys(corpus: Corpus, configs: list[ModelConfig], runs: int) -> list[tuple[str, str, int]]:
    return [
        (item.ticket.id, config.id, run)
        for item in corpus.items
        for config in configs
        for run in range(1, runs + 1)
    ]


def run_benchmark(
    corpus: Corpus,
    configs: list[ModelConfig],
    runs: int,
    policy: RetryPolicy,
    parallelism: int,
    ledger,
    providers: dict[str, object] | None = None,
    base_seed: int = 0,
    rubric: Rubric = DEFAULT_RUBRIC,
    guidelines: Guidelines = DEFAULT_GUIDELINES,
    progress: Callable[[int, int, int], None] | None = None,
) -> RunSummary:
    """Evaluate |corpus| x |configs| x runs cells, appending to the ledger.

    Keys already present in the ledger are skipped (resume semantics); a
    ledger write failure propagates after in-flight work is cancelled, leaving
    the ledger resumable. Appends are serialized on the calling thread.
    """
    if runs < 1:
        raise ValueError("runs must be >= 1")
    if parallelism < 1:
        raise ValueError("parallelism must be >= 1")

    config_by_id = {config.id: config for config in configs}
    if len(config_by_id) != len(configs):
        raise ValueError("duplicate config ids")
    if providers is None:
        providers = {cid: provider_for(cfg, base_seed) for cid, cfg in config_by_id.items()}

    planned = plan_keys(corpus, configs, runs)
    existing = set(ledger.keys())
    pending = [key for key in planned if key not in existing]
    skipped = len(planned) - len(pending)

    # prompts are fixed per (item, config); build once so every run reuses
    # byte-identical text
    pairs: dict[tuple[str, str], PromptPair] = {}
    for item in corpus.items:
        for config in configs:
            pairs[(item.ticket.id, config.id)] = build_prompt_pair(
                item.ticket, item.gherkin_source, rubric, guidelines
            )

    def run_cell(key: tuple[str, str, int]) -> EvaluationRecord:
        ticket_id, config_id, run_index = key
        config = config_by_id[config_id]
        return evaluate_item(
            providers[config_id], config, corpus.get(ticket_id),
            policy=policy, run_index=run_index, rubric=rubric,
            guidelines=guidelines, prompt_pair=pairs[(ticket_id, config_id)],
        )

    started = time.perf_counter()
    done = 0
    failures = 0
    first_successes = 0
    if pending:
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            positions = {pool.submit(run_cell, key): i for i, key in enumerate(pending)}
            futures = set(positions)
            try:
                while futures:
                    finished, futures = wait(futures, return_when=FIRST_COMPLETED)
                    # append each harvest batch in plan order so sequential runs
                    # produce byte-identical ledgers
                    for future in sorted(finished, key=positions.__getitem__):
                        record = future.result()
                        ledger.append(record)
                        done += 1
                        if not record.completed:
                            failures += 1
                        if record.first_attempt_success:
                            first_successes += 1
                        if progress is not None:
                            progress(done + skipped, len(planned), first_successes)
            except BaseException:
                for future in futures:
                    future.cancel()
                raise

    return RunSummary(
        records_written=done,
        skipped=skipped,
        failures=failures,
        wall_time=time.perf_counter() - started,
        planned=len(planned),
        first_attempt_successes=first_successes,
    )
