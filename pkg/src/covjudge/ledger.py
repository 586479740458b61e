"""Append-only JSONL run ledger for crash-safe resumption.

Line 1 is a header binding the ledger to its inputs via content digests; every
following line is one evaluation record. Records are flushed and fsynced
before the append is acknowledged, so an acknowledged record survives a crash.
A torn final line (partial write) is dropped with a warning on load; any other
malformed line is an error.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Sequence

from .corpus import Corpus
from .judge import (
    AttemptRecord,
    AttemptStatus,
    EvaluationRecord,
    JudgeVerdict,
    plan_keys,
)
from .provider import MockSettings, ModelConfig, ModelFamily, ReasoningEffort

logger = logging.getLogger(__name__)

TOOL_VERSION = "0.1.0"

Key = tuple[str, str, int]


class LedgerError(Exception):
    pass


class MissingLedgerError(LedgerError):
    pass


class CorruptHeaderError(LedgerError):
    pass


class CorruptEntryError(LedgerError):
    def __init__(self, line_number: int, message: str):
        super().__init__(f"line {line_number}: {message}")
        self.line_number = line_number


class DuplicateKeyError(LedgerError):
    pass


class CorpusMismatchError(LedgerError):
    pass


class ConfigMismatchError(LedgerError):
    pass


@dataclass(frozen=True)
class LedgerHeader:
    created_at: str
    tool_version: str
    seed: int
    corpus_digest: str
    config_digest: str
    configs: tuple[ModelConfig, ...]


@dataclass(frozen=True)
class RunLedger:
    header: LedgerHeader
    entries: tuple[EvaluationRecord, ...]
    warnings: tuple[str, ...] = ()

    def keys(self) -> set[Key]:
        return {entry.key for entry in self.entries}


# --- digests ------------------------------------------------------------------

def _canonical(value) -> str:
    return json.dumps(value, sort_keys=True, separators=(",", ":"))


def corpus_digest(corpus: Corpus) -> str:
    hasher = hashlib.sha256()
    for item in corpus.items:
        hasher.update(_canonical({
            "id": item.ticket.id,
            "title": item.ticket.title,
            "description": item.ticket.description,
            "acceptance_criteria": list(item.ticket.acceptance_criteria),
            "success_scenarios": list(item.ticket.success_scenarios),
            "error_scenarios": list(item.ticket.error_scenarios),
            "http_method": item.ticket.http_method.value,
            "script": item.gherkin_source,
            "normalized_score": item.ground_truth.normalized_score,
            "dimensions": list(item.ground_truth.dimensions or ()),
        }).encode("utf-8"))
        hasher.update(b"\x00")
    return hasher.hexdigest()


def config_to_dict(config: ModelConfig) -> dict:
    data = {
        "id": config.id,
        "family": config.family.value,
        "model_name": config.model_name,
        "reasoning_effort": config.reasoning_effort.value,
        "prompt_rate": config.prompt_rate,
        "completion_rate": config.completion_rate,
        "endpoint": config.endpoint,
        "auth_env_var": config.auth_env_var,
        "temperature": config.temperature,
        "structured_output": config.structured_output,
    }
    if config.mock is not None:
        data["mock"] = {
            "failure_rate": config.mock.failure_rate,
            "seed": config.mock.seed,
            "delay": config.mock.delay,
        }
    return data


def config_from_dict(data: dict) -> ModelConfig:
    mock = None
    if data.get("mock") is not None:
        raw = data["mock"]
        mock = MockSettings(
            failure_rate=float(raw.get("failure_rate", 0.0)),
            seed=raw.get("seed"),
            delay=float(raw.get("delay", 0.0)),
        )
    return ModelConfig(
        id=data["id"],
        family=ModelFamily(data["family"]),
        model_name=data["model_name"],
        reasoning_effort=ReasoningEffort(data.get("reasoning_effort", "none")),
        prompt_rate=float(data.get("prompt_rate", 0.0)),
        completion_rate=float(data.get("completion_rate", 0.0)),
        endpoint=data.get("endpoint", ""),
        auth_env_var=data.get("auth_env_var", ""),
        temperature=data.get("temperature"),
        structured_output=bool(data.get("structured_output", False)),
        mock=mock,
    )


def config_digest(configs: Sequence[ModelConfig]) -> str:
    payload = _canonical([config_to_dict(c) for c in configs])
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


# --- record (de)serialization --------------------------------------------------

def record_to_dict(record: EvaluationRecord) -> dict:
    return {
        "ticket_id": record.ticket_id,
        "config_id": record.config_id,
        "run_index": record.run_index,
        "prompt_hash": record.prompt_hash,
        "first_attempt_success": record.first_attempt_success,
        "completed": record.completed,
        "verdict": None if record.verdict is None else {
            "coverage_percentage": record.verdict.coverage_percentage,
            "covered": list(record.verdict.covered),
            "gaps": list(record.verdict.gaps),
            "recommendations": list(record.verdict.recommendations),
            "rubric_flags": dict(record.verdict.rubric_flags),
        },
        "attempts": [
            {
                "index": a.index,
                "status": a.status.value,
                "prompt_tokens": a.prompt_tokens,
                "completion_tokens": a.completion_tokens,
                "latency": a.latency,
                "raw_excerpt": a.raw_excerpt,
            }
            for a in record.attempts
        ],
    }


def record_from_dict(data: dict) -> EvaluationRecord:
    verdict = None
    if data.get("verdict") is not None:
        raw = data["verdict"]
        verdict = JudgeVerdict(
            coverage_percentage=float(raw["coverage_percentage"]),
            covered=tuple(raw["covered"]),
            gaps=tuple(raw["gaps"]),
            recommendations=tuple(raw["recommendations"]),
            rubric_flags=dict(raw["rubric_flags"]),
        )
    attempts = tuple(
        AttemptRecord(
            index=int(a["index"]),
            status=AttemptStatus(a["status"]),
            prompt_tokens=int(a["prompt_tokens"]),
            completion_tokens=int(a["completion_tokens"]),
            latency=float(a["latency"]),
            raw_excerpt=a["raw_excerpt"],
        )
        for a in data["attempts"]
    )
    return EvaluationRecord(
        ticket_id=data["ticket_id"],
        config_id=data["config_id"],
        run_index=int(data["run_index"]),
        attempts=attempts,
        verdict=verdict,
        first_attempt_success=bool(data["first_attempt_success"]),
        completed=bool(data["completed"]),
        prompt_hash=data["prompt_hash"],
    )


def _header_to_dict(header: LedgerHeader) -> dict:
    return {
        "created_at": header.created_at,
        "tool_version": header.tool_version,
        "seed": header.seed,
        "corpus_digest": header.corpus_digest,
        "config_digest": header.config_digest,
        "configs": [config_to_dict(c) for c in header.configs],
    }


def _header_from_dict(data: dict) -> LedgerHeader:
    return LedgerHeader(
        created_at=data["created_at"],
        tool_version=data["tool_version"],
        seed=int(data["seed"]),
        corpus_digest=data["corpus_digest"],
        config_digest=data["config_digest"],
        configs=tuple(config_from_dict(c) for c in data.get("configs", [])),
    )


def make_header(corpus: Corpus, configs: Sequence[ModelConfig], seed: int) -> LedgerHeader:
    return LedgerHeader(
        created_at=datetime.now(timezone.utc).isoformat(),
        tool_version=TOOL_VERSION,
        seed=seed,
        corpus_digest=corpus_digest(corpus),
        config_digest=config_digest(configs),
        configs=tuple(configs),
    )


# --- writer / loader ------------------------------------------------------------

class LedgerWriter:
    """Single exclusive writer; readers may consume the file concurrently."""

    def __init__(self, path: Path, header: LedgerHeader, fh, existing: set[Key]):
        self.path = path
        self.header = header
        self._fh = fh
        self._keys = existing

    @classmethod
    def create(cls, path: str | Path, header: LedgerHeader) -> "LedgerWriter":
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        fh = path.open("x", encoding="utf-8")
        fh.write(json.dumps(_header_to_dict(header)) + "\n")
        fh.flush()
        os.fsync(fh.fileno())
        return cls(path, header, fh, set())

    @classmethod
    def resume(cls, path: str | Path) -> "LedgerWriter":
        path = Path(path)
        ledger = load_ledger(path)
        # drop any torn tail before appending so the file stays line-aligned
        size = _complete_prefix_size(path)
        fh = path.open("r+", encoding="utf-8")
        fh.truncate(size)
        fh.seek(0, os.SEEK_END)
        return cls(path, ledger.header, fh, ledger.keys())

    def keys(self) -> set[Key]:
        return set(self._keys)

    def append(self, record: EvaluationRecord) -> None:
        if record.key in self._keys:
            raise DuplicateKeyError(f"key already in ledger: {record.key}")
        self._fh.write(json.dumps(record_to_dict(record)) + "\n")
        self._fh.flush()
        os.fsync(self._fh.fileno())
        self._keys.add(record.key)

    def close(self) -> None:
        self._fh.close()

    def __enter__(self) -> "LedgerWriter":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def append_record(writer: LedgerWriter, record: EvaluationRecord) -> None:
    writer.append(record)


def _complete_prefix_size(path: Path) -> int:
    data = path.read_bytes()
    end = data.rfind(b"\n")
    return end + 1 if end >= 0 else 0


def load_ledger(path: str | Path) -> RunLedger:
    path = Path(path)
    if not path.is_file():
        raise MissingLedgerError(f"ledger file not found: {path}")
    data = path.read_bytes()
    if not data:
        raise CorruptHeaderError(f"{path}: empty file, no header")

    torn_tail = not data.endswith(b"\n")
    lines = data.decode("utf-8", errors="replace").split("\n")
    if lines and lines[-1] == "":
        lines.pop()

    warnings: list[str] = []
    if torn_tail:
        dropped = lines.pop()
        message = f"{path}: dropped torn final line ({len(dropped)} chars, partial write)"
        warnings.append(message)
        logger.warning(message)
        if not lines:
            raise CorruptHeaderError(f"{path}: header line is incomplete")

    try:
        header = _header_from_dict(json.loads(lines[0]))
    except (json.JSONDecodeError, KeyError, ValueError, TypeError) as exc:
        raise CorruptHeaderError(f"{path}: unreadable header ({exc})") from exc

    entries: list[EvaluationRecord] = []
    seen: set[Key] = set()
    for line_number, line in enumerate(lines[1:], start=2):
        try:
            record = record_from_dict(json.loads(line))
        except (json.JSONDecodeError, KeyError, ValueError, TypeError) as exc:
            raise CorruptEntryError(line_number, f"unreadable record ({exc})") from exc
        if record.key in seen:
            raise CorruptEntryError(line_number, f"duplicate key {record.key}")
        seen.add(record.key)
        entries.append(record)
    return RunLedger(header=header, entries=tuple(entries), warnings=tuple(warnings))


def pending_work(
    ledger: RunLedger,
    corpus: Corpus,
    configs: Sequence[ModelConfig],
    runs: int,
) -> set[Key]:
    """Planned keys absent from the ledger; refuses to plan against changed data."""
    actual = corpus_digest(corpus)
    if ledger.header.corpus_digest != actual:
        raise CorpusMismatchError(
            f"ledger was written for corpus {ledger.header.corpus_digest[:12]}..., "
            f"got {actual[:12]}..."
        )
    planned = set(plan_keys(corpus, list(configs), runs))
    return planned - ledger.keys()
