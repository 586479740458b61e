"""Judge prompt assembly: system role with rubric, user message with the work item.

All rendering is deterministic and single-pass: placeholder substitution never
rescans substituted text, so ticket or script content containing braces or
slot names is passed through literally.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from .corpus import HttpMethod, JiraTicket

_WEIGHT_TOLERANCE = 1e-9


class PromptError(Exception):
    pass


class MissingFieldError(PromptError):
    """A template slot would be rendered empty."""


class UnknownMethodError(PromptError):
    pass


def slug(name: str) -> str:
    """Normalize a dimension name to its machine key, e.g. rubric-flag keys."""
    return re.sub(r"[^a-z0-9]+", "_", name.lower()).strip("_")


@dataclass(frozen=True)
class RubricDimension:
    name: str
    weight: float
    description: str


@dataclass(frozen=True)
class Rubric:
    dimensions: tuple[RubricDimension, ...]

    def __post_init__(self):
        if not self.dimensions:
            raise ValueError("rubric has no dimensions")
        total = sum(d.weight for d in self.dimensions)
        if abs(total - 1.0) > _WEIGHT_TOLERANCE:
            raise ValueError(f"rubric weights sum to {total}, expected 1.0")
        for dim in self.dimensions:
            if not 0.0 <= dim.weight <= 1.0:
                raise ValueError(f"weight out of range for '{dim.name}': {dim.weight}")
            if not dim.name:
                raise ValueError("rubric dimension with empty name")

    def flag_keys(self) -> tuple[str, ...]:
        return tuple(slug(d.name) for d in self.dimensions)


@dataclass(frozen=True)
class Guidelines:
    per_method: dict[HttpMethod, tuple[str, ...]]

    def __post_init__(self):
        for method, items in self.per_method.items():
            if not items:
                raise ValueError(f"guidelines for {method.value} are empty")


@dataclass(frozen=True)
class PromptPair:
    system_text: str
    user_text: str


DEFAULT_RUBRIC = Rubric(dimensions=(
    RubricDimension(
        "Scenario completeness", 0.4,
        "coverage of happy path, error conditions, edge cases",
    ),
    RubricDimension(
        "Acceptance criteria alignment", 0.3,
        "explicit validation of specified requirements",
    ),
    RubricDimension(
        "HTTP method-specific concerns", 0.2,
        "appropriate handling of idempotency, caching, state changes",
    ),
    RubricDimension(
        "Assertion quality", 0.1,
        "depth and specificity of validation steps",
    ),
))

DEFAULT_GUIDELINES = Guidelines(per_method={
    HttpMethod.GET: (
        "Valid requests",
        "empty responses",
        "pagination",
        "query parameters",
        "authorization (401/403)",
        "rate limiting",
        "caching headers",
    ),
    HttpMethod.POST: (
        "Valid/invalid payloads",
        "duplicates",
        "validation",
        "large payloads",
        "error handling (500)",
    ),
    HttpMethod.PUT: (
        "Valid updates",
        "partial updates",
        "non-existent resources",
        "concurrency",
    ),
    HttpMethod.DELETE: (
        "Valid deletion",
        "non-existent resources",
        "soft deletes",
        "concurrency",
    ),
})

SYSTEM_PROMPT_TEMPLATE = (
    "You are a senior QA engineer specializing in behavior-driven development "
    "and test coverage analysis. Your task is to analyze how well a set of "
    "Gherkin-style acceptance tests cover the requirements of a given Jira "
    "story, based on a defined set of testing guidelines. Provide a coverage "
    "percentage, highlight what's covered, identify gaps or missing scenarios, "
    "and recommend improvements if needed. Use the following rubric for your "
    "assessment:\n"
    "{four_dimensional_weighted_rubric}"
)

USER_PROMPT_TEMPLATE = """\
Below is a Jira story, a set of Gherkin acceptance tests, and standard
testing guidelines. Analyze how well the Gherkin tests cover the story
based on the guidelines.

Jira Story:
  ID: "{jira_id}"
  Title: "{jira_title}"
  Description: "{jira_description}"

Gherkin Test Cases:
{gherkin_tests}

Standard Guidelines:
{guidelines}

Output format (strict JSON):
{example_output}
"""


def default_example_output(rubric: Rubric = DEFAULT_RUBRIC) -> str:
    """Minimal valid verdict document exercising every required field."""
    doc = {
        "coverage_percentage": 85,
        "covered": ["Happy path returns the expected resource"],
        "gaps": ["No scenario exercises unauthorized access"],
        "recommendations": ["Add an error scenario asserting the failure response body"],
        "rubric_flags": {key: True for key in rubric.flag_keys()},
    }
    return json.dumps(doc, indent=2)


def _substitute(template: str, values: dict[str, str]) -> str:
    pattern = re.compile(r"\{(" + "|".join(map(re.escape, values)) + r")\}")
    return pattern.sub(lambda m: values[m.group(1)], template)


def render_rubric(rubric: Rubric) -> str:
    lines = []
    for dim in rubric.dimensions:
        lines.append(f"- {dim.name} ({dim.weight * 100:g}%): {dim.description}")
    return "\n".join(lines)


def render_system_prompt(rubric: Rubric = DEFAULT_RUBRIC) -> str:
    return _substitute(
        SYSTEM_PROMPT_TEMPLATE,
        {"four_dimensional_weighted_rubric": render_rubric(rubric)},
    )


def select_guidelines(
    method: HttpMethod | str, guidelines: Guidelines = DEFAULT_GUIDELINES
) -> list[str]:
    """Ordered expectation list for one HTTP method."""
    if isinstance(method, str):
        try:
            method = HttpMethod(method)
        except ValueError:
            raise UnknownMethodError(f"unsupported HTTP method '{method}'") from None
    if method not in guidelines.per_method:
        raise UnknownMethodError(f"no guidelines configured for {method.value}")
    return list(guidelines.per_method[method])


def render_guidelines(method: HttpMethod, guidelines: Guidelines) -> str:
    items = select_guidelines(method, guidelines)
    return f"{method.value}:\n" + "\n".join(f"- {item}" for item in items)


def _labeled_sections(ticket: JiraTicket) -> str:
    # the template exposes one description slot; fold the ticket's structured
    # lists into it as labeled subsections
    parts = [ticket.description]
    for label, values in (
        ("Acceptance Criteria", ticket.acceptance_criteria),
        ("Success Scenarios", ticket.success_scenarios),
        ("Error Scenarios", ticket.error_scenarios),
    ):
        if values:
            parts.append(f"{label}:\n" + "\n".join(f"- {v}" for v in values))
    return "\n\n".join(parts)


def render_user_prompt(
    ticket: JiraTicket,
    gherkin_source: str,
    guidelines: Guidelines = DEFAULT_GUIDELINES,
    example_output: str | None = None,
) -> str:
    if example_output is None:
        example_output = default_example_output()
    values = {
        "jira_id": ticket.id,
        "jira_title": ticket.title,
        "jira_description": _labeled_sections(ticket),
        "gherkin_tests": gherkin_source,
        "guidelines": render_guidelines(ticket.http_method, guidelines),
        "example_output": example_output,
    }
    for name, value in values.items():
        if not value.strip():
            raise MissingFieldError(f"template slot '{name}' would be empty")
    return _substitute(USER_PROMPT_TEMPLATE, values)


def build_prompt_pair(
    ticket: JiraTicket,
    gherkin_source: str,
    rubric: Rubric = DEFAULT_RUBRIC,
    guidelines: Guidelines = DEFAULT_GUIDELINES,
    example_output: str | None = None,
) -> PromptPair:
    return PromptPair(
        system_text=render_system_prompt(rubric),
        user_text=render_user_prompt(ticket, gherkin_source, guidelines, example_output),
    )


def load_rubric(path: str | Path) -> Rubric:
    """Load a rubric from a JSON list of {name, weight, description} objects."""
    with Path(path).open(encoding="utf-8") as fh:
        data = json.load(fh)
    if not isinstance(data, list):
        raise ValueError(f"{path}: expected a JSON list of dimensions")
    dims = []
    for entry in data:
        dims.append(RubricDimension(
            name=str(entry["name"]),
            weight=float(entry["weight"]),
            description=str(entry.get("description", "")),
        ))
    return Rubric(dimensions=tuple(dims))


def load_guidelines(path: str | Path) -> Guidelines:
    """Load guidelines from a JSON object mapping method names to string lists."""
    with Path(path).open(encoding="utf-8") as fh:
        data = json.load(fh)
    if not isinstance(data, dict):
        raise ValueError(f"{path}: expected a JSON object keyed by HTTP method")
    per_method = {}
    for key, items in data.items():
        try:
            method = HttpMethod(key)
        except ValueError:
            raise UnknownMethodError(f"{path}: unsupported HTTP method '{key}'") from None
        per_method[method] = tuple(str(item) for item in items)
    return Guidelines(per_method=per_method)


def default_config_dir() -> Path:
    """Directory holding the editable copies of the bundled rubric/guidelines."""
    return Path(str(resources.files("covjudge").joinpath("data")))
