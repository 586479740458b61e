"""Benchmark corpus: requirement tickets, Gherkin scripts, expert annotations.

On-disk layout, one directory per item::

    <root>/<ticket-id>/ticket.json      id, title, description, acceptance_criteria[],
                                        success_scenarios[], error_scenarios[], http_method
    <root>/<ticket-id>/script.feature   UTF-8 Gherkin text
    <root>/<ticket-id>/annotation.json  ticket_id, dimensions{name: score}, normalized_score

The corpus is immutable after load and safe for concurrent reads.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

from .gherkin import GherkinParseError, parse_feature


class HttpMethod(str, Enum):
    GET = "GET"
    POST = "POST"
    PUT = "PUT"
    DELETE = "DELETE"


# rubric weights in annotation order; the normalized score is
# 10 x (0.4*completeness + 0.3*alignment + 0.2*method + 0.1*assertions)
DIMENSION_WEIGHTS = (
    ("scenario_completeness", 0.4),
    ("acceptance_alignment", 0.3),
    ("method_concerns", 0.2),
    ("assertion_quality", 0.1),
)

_CONSISTENCY_TOLERANCE = 1e-9


class CorpusError(Exception):
    """Base class for corpus loading problems."""


class MissingFileError(CorpusError):
    pass


class DuplicateIdError(CorpusError):
    pass


class AnnotationMismatchError(CorpusError):
    pass


class SchemaError(CorpusError):
    pass


@dataclass(frozen=True)
class JiraTicket:
    id: str
    title: str
    description: str
    acceptance_criteria: tuple[str, ...]
    success_scenarios: tuple[str, ...]
    error_scenarios: tuple[str, ...]
    http_method: HttpMethod


@dataclass(frozen=True)
class GroundTruth:
    """Expert coverage annotation; dimensions may be absent (normalized only)."""

    ticket_id: str
    scenario_completeness: float | None
    acceptance_alignment: float | None
    method_concerns: float | None
    assertion_quality: float | None
    normalized_score: float

    @property
    def dimensions(self) -> tuple[float, ...] | None:
        dims = (self.scenario_completeness, self.acceptance_alignment,
                self.method_concerns, self.assertion_quality)
        if any(d is None for d in dims):
            return None
        return dims  # type: ignore[return-value]


@dataclass(frozen=True)
class CorpusItem:
    ticket: JiraTicket
    gherkin_source: str
    ground_truth: GroundTruth


@dataclass(frozen=True)
class Corpus:
    items: tuple[CorpusItem, ...]
    lookup: dict[str, int]

    def __len__(self) -> int:
        return len(self.items)

    def __iter__(self):
        return iter(self.items)

    def get(self, ticket_id: str) -> CorpusItem:
        return self.items[self.lookup[ticket_id]]

    def ticket_ids(self) -> list[str]:
        return [item.ticket.id for item in self.items]


@dataclass
class ValidationReport:
    item_count: int
    method_counts: dict[str, int]
    ticket_ids: list[str]
    parse_failures: dict[str, str] = field(default_factory=dict)

    @property
    def all_parse(self) -> bool:
        return not self.parse_failures


# 10 x weight per dimension; integer factors keep the weighted sum exact for
# decimal inputs (4*10 + 3*10 + 2*10 + 1*10 is 100.0, never 99.999...)
_SCALED_WEIGHTS = tuple(round(w * 10) for _, w in DIMENSION_WEIGHTS)


def ground_truth_score(
    scenario_completeness: float,
    acceptance_alignment: float,
    method_concerns: float,
    assertion_quality: float,
) -> float:
    """Aggregate the four 0-10 rubric dimensions into a 0-100 percentage."""
    dims = (scenario_completeness, acceptance_alignment, method_concerns, assertion_quality)
    for (name, _), value in zip(DIMENSION_WEIGHTS, dims):
        if not isinstance(value, (int, float)) or isinstance(value, bool):
            raise SchemaError(f"dimension '{name}' is not a number: {value!r}")
        if not 0.0 <= value <= 10.0:
            raise SchemaError(f"dimension '{name}' out of range [0, 10]: {value}")
    return float(sum(w * v for w, v in zip(_SCALED_WEIGHTS, dims)))


def _require(data: dict, key: str, kind, where: str):
    if key not in data:
        raise SchemaError(f"{where}: missing field '{key}'")
    value = data[key]
    if kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise SchemaError(f"{where}: field '{key}' is not a number")
        return float(value)
    if not isinstance(value, kind):
        raise SchemaError(f"{where}: field '{key}' has wrong type")
    return value


def _string_list(data: dict, key: str, where: str) -> tuple[str, ...]:
    value = _require(data, key, list, where)
    if not all(isinstance(v, str) for v in value):
        raise SchemaError(f"{where}: field '{key}' must be a list of strings")
    return tuple(value)


def _load_json(path: Path) -> dict:
    try:
        with path.open(encoding="utf-8") as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(data, dict):
        raise SchemaError(f"{path}: expected a JSON object")
    return data


def _parse_ticket(path: Path) -> JiraTicket:
    data = _load_json(path)
    where = str(path)
    ticket_id = _require(data, "id", str, where)
    title = _require(data, "title", str, where)
    description = _require(data, "description", str, where)
    if not ticket_id:
        raise SchemaError(f"{where}: ticket id is empty")
    if not title or not description:
        raise SchemaError(f"{where}: title and description must be non-empty")
    method_raw = _require(data, "http_method", str, where)
    try:
        method = HttpMethod(method_raw)
    except ValueError:
        raise SchemaError(
            f"{where}: http_method '{method_raw}' is not one of GET/POST/PUT/DELETE"
        ) from None
    return JiraTicket(
        id=ticket_id,
        title=title,
        description=description,
        acceptance_criteria=_string_list(data, "acceptance_criteria", where),
        success_scenarios=_string_list(data, "success_scenarios", where),
        error_scenarios=_string_list(data, "error_scenarios", where),
        http_method=method,
    )


def _parse_annotation(path: Path) -> GroundTruth:
    data = _load_json(path)
    where = str(path)
    ticket_id = _require(data, "ticket_id", str, where)
    normalized = _require(data, "normalized_score", float, where)
    if not 0.0 <= normalized <= 100.0:
        raise SchemaError(f"{where}: normalized_score out of range [0, 100]: {normalized}")

    dims: dict[str, float | None] = {name: None for name, _ in DIMENSION_WEIGHTS}
    raw_dims = data.get("dimensions")
    if raw_dims is not None:
        if not isinstance(raw_dims, dict):
            raise SchemaError(f"{where}: 'dimensions' must be an object")
        for name, _ in DIMENSION_WEIGHTS:
            if name not in raw_dims:
                raise SchemaError(f"{where}: dimensions missing '{name}'")
            value = raw_dims[name]
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise SchemaError(f"{where}: dimension '{name}' is not a number")
            if not 0.0 <= value <= 10.0:
                raise SchemaError(f"{where}: dimension '{name}' out of range [0, 10]")
            dims[name] = float(value)
        unknown = set(raw_dims) - {name for name, _ in DIMENSION_WEIGHTS}
        if unknown:
            raise SchemaError(f"{where}: unknown dimensions {sorted(unknown)}")
        recomputed = ground_truth_score(*(dims[name] for name, _ in DIMENSION_WEIGHTS))
        if abs(recomputed - normalized) > _CONSISTENCY_TOLERANCE:
            raise SchemaError(
                f"{where}: normalized_score {normalized} disagrees with "
                f"dimension weighted sum {recomputed}"
            )
    return GroundTruth(
        ticket_id=ticket_id,
        scenario_completeness=dims["scenario_completeness"],
        acceptance_alignment=dims["acceptance_alignment"],
        method_concerns=dims["method_concerns"],
        assertion_quality=dims["assertion_quality"],
        normalized_score=normalized,
    )


def load_corpus(root_path: str | Path) -> Corpus:
    """Load every item under ``root_path``, ordered lexicographically by ticket id.

    Raises MissingFileError, DuplicateIdError, AnnotationMismatchError or
    SchemaError; loading is deterministic across platforms.
    """
    root = Path(root_path)
    if not root.is_dir():
        raise MissingFileError(f"corpus root '{root}' is not a directory")

    loaded: dict[str, CorpusItem] = {}
    for item_dir in sorted(p for p in root.iterdir() if p.is_dir()):
        ticket_path = item_dir / "ticket.json"
        script_path = item_dir / "script.feature"
        annotation_path = item_dir / "annotation.json"
        for required in (ticket_path, script_path, annotation_path):
            if not required.is_file():
                raise MissingFileError(f"{item_dir.name}: missing {required.name}")

        ticket = _parse_ticket(ticket_path)
        if ticket.id in loaded:
            raise DuplicateIdError(f"duplicate ticket id '{ticket.id}'")

        source = script_path.read_text(encoding="utf-8")
        try:
            parse_feature(source)
        except GherkinParseError as exc:
            raise SchemaError(f"{script_path}: script does not parse ({exc})") from exc

        annotation = _parse_annotation(annotation_path)
        if annotation.ticket_id != ticket.id:
            raise AnnotationMismatchError(
                f"{annotation_path}: annotation references '{annotation.ticket_id}' "
                f"but the ticket is '{ticket.id}'"
            )
        loaded[ticket.id] = CorpusItem(
            ticket=ticket, gherkin_source=source, ground_truth=annotation
        )

    ordered = tuple(loaded[tid] for tid in sorted(loaded))
    lookup = {item.ticket.id: i for i, item in enumerate(ordered)}
    return Corpus(items=ordered, lookup=lookup)


def validate_corpus(corpus: Corpus) -> ValidationReport:
    """Summarize method distribution and per-item parse status; never raises."""
    method_counts = {method.value: 0 for method in HttpMethod}
    parse_failures: dict[str, str] = {}
    for item in corpus.items:
        method_counts[item.ticket.http_method.value] += 1
        try:
            parse_feature(item.gherkin_source)
        except GherkinParseError as exc:
            parse_failures[item.ticket.id] = str(exc)
    return ValidationReport(
        item_count=len(corpus.items),
        method_counts=method_counts,
        ticket_ids=corpus.ticket_ids(),
        parse_failures=parse_failures,
    )
