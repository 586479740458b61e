"""Parser and canonical renderer for a plain-scenario subset of Gherkin.

Supported grammar: one ``Feature:`` header, free-text description lines,
``@tag`` lines, ``Scenario:`` blocks, and Given/When/Then/And/But steps.
Scenario Outlines, Examples tables, Backgrounds, Rules, data tables and
docstrings are rejected with a diagnostic rather than half-parsed.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum


class Keyword(str, Enum):
    GIVEN = "Given"
    WHEN = "When"
    THEN = "Then"
    AND = "And"
    BUT = "But"


PRIMARY_KEYWORDS = (Keyword.GIVEN, Keyword.WHEN, Keyword.THEN)

_UNSUPPORTED_PREFIXES = (
    "Scenario Outline:",
    "Scenario Template:",
    "Background:",
    "Examples:",
    "Scenarios:",
    "Rule:",
)


class GherkinParseError(ValueError):
    """Raised for any input the parser cannot turn into a Feature.

    ``code`` is a stable machine-readable kind (e.g. ``no-feature-header``)
    and ``line`` is the 1-based line number the diagnostic points at.
    """

    def __init__(self, code: str, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.code = code
        self.line = line


@dataclass(frozen=True)
class Step:
    keyword: Keyword
    resolved_keyword: Keyword
    text: str


@dataclass(frozen=True)
class Scenario:
    name: str
    tags: tuple[str, ...]
    steps: tuple[Step, ...]


@dataclass(frozen=True)
class Feature:
    name: str
    description: str
    scenarios: tuple[Scenario, ...]


@dataclass
class ScenarioStats:
    scenario_count: int
    step_count: int
    steps_by_resolved_keyword: dict[str, int] = field(default_factory=dict)


def _split_step(line: str) -> tuple[Keyword, str] | None:
    for kw in Keyword:
        if line == kw.value or line.startswith(kw.value + " "):
            return kw, line[len(kw.value):].strip()
    return None


class _Parser:
    def __init__(self, source: str):
        self.lines = source.replace("\r\n", "\n").split("\n")
        self.feature_name: str | None = None
        self.description_lines: list[str] = []
        self.scenarios: list[Scenario] = []
        self.pending_tags: list[str] = []
        # current scenario under construction
        self.scenario_name: str | None = None
        self.scenario_line = 0
        self.scenario_tags: tuple[str, ...] = ()
        self.steps: list[Step] = []
        self.last_primary: Keyword | None = None

    def fail(self, code: str, line: int, message: str) -> None:
        raise GherkinParseError(code, line, message)

    def parse(self) -> Feature:
        saw_content = False
        for lineno, raw in enumerate(self.lines, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            saw_content = True
            self.handle_line(lineno, line)
        if self.feature_name is None:
            if not saw_content:
                self.fail("empty-input", 1, "input contains no Gherkin content")
            self.fail("no-feature-header", 1, "no 'Feature:' header found")
        self.close_scenario()
        if self.pending_tags:
            self.fail("dangling-tags", len(self.lines),
                      "tags are not followed by a scenario")
        if not self.scenarios:
            self.fail("feature-without-scenarios", len(self.lines),
                      "feature declares no scenarios")
        return Feature(
            name=self.feature_name,
            description="\n".join(self.description_lines),
            scenarios=tuple(self.scenarios),
        )

    def handle_line(self, lineno: int, line: str) -> None:
        for prefix in _UNSUPPORTED_PREFIXES:
            if line.startswith(prefix):
                self.fail("unsupported-construct", lineno,
                          f"'{prefix.rstrip(':')}' is outside the supported Gherkin subset")
        if line.startswith('"""') or line.startswith("```"):
            self.fail("unsupported-construct", lineno,
                      "docstring blocks are outside the supported Gherkin subset")
        if line.startswith("|"):
            self.fail("unsupported-construct", lineno,
                      "data tables are outside the supported Gherkin subset")

        if line.startswith("@"):
            tokens = line.split()
            if not all(t.startswith("@") and len(t) > 1 for t in tokens):
                self.fail("invalid-tag-line", lineno,
                          "tag lines may only contain @-prefixed tags")
            if self.feature_name is None:
                self.fail("unsupported-construct", lineno,
                          "tags above the feature header are not supported; tag scenarios instead")
            self.pending_tags.extend(tokens)
            return

        if line.startswith("Feature:"):
            if self.feature_name is not None:
                self.fail("unsupported-construct", lineno,
                          "multiple 'Feature:' headers in one document")
            name = line[len("Feature:"):].strip()
            if not name:
                self.fail("empty-name", lineno, "feature name is empty")
            self.feature_name = name
            return

        if line.startswith("Scenario:"):
            if self.feature_name is None:
                self.fail("no-feature-header", lineno,
                          "'Scenario:' before the 'Feature:' header")
            self.close_scenario()
            name = line[len("Scenario:"):].strip()
            if not name:
                self.fail("empty-name", lineno, "scenario name is empty")
            self.scenario_name = name
            self.scenario_line = lineno
            self.scenario_tags = tuple(self.pending_tags)
            self.pending_tags = []
            self.steps = []
            self.last_primary = None
            return

        step = _split_step(line)
        if step is not None:
            keyword, text = step
            if self.feature_name is None:
                self.fail("no-feature-header", lineno,
                          "step before the 'Feature:' header")
            if self.scenario_name is None:
                self.fail("step-before-scenario", lineno,
                          f"'{keyword.value}' step appears outside any scenario")
            if not text:
                self.fail("empty-step", lineno, f"'{keyword.value}' step has no text")
            if keyword in PRIMARY_KEYWORDS:
                resolved = keyword
                self.last_primary = keyword
            else:
                if self.last_primary is None:
                    self.fail("dangling-and", lineno,
                              f"'{keyword.value}' has no preceding Given/When/Then step")
                resolved = self.last_primary
            if not self.steps and resolved is Keyword.THEN:
                self.fail("first-step-keyword", lineno,
                          "a scenario must open with a Given or When step")
            self.steps.append(Step(keyword=keyword, resolved_keyword=resolved, text=text))
            return

        # free text: legal as feature description, noise inside a scenario
        if self.feature_name is not None and self.scenario_name is None:
            self.description_lines.append(line)
            return
        if self.feature_name is None:
            self.fail("no-feature-header", lineno,
                      "text before the 'Feature:' header")
        self.fail("unrecognized-line", lineno,
                  "expected a step keyword, tag line, or 'Scenario:' header")

    def close_scenario(self) -> None:
        if self.scenario_name is None:
            return
        if not self.steps:
            self.fail("scenario-without-steps", self.scenario_line,
                      f"scenario '{self.scenario_name}' has no steps")
        self.scenarios.append(Scenario(
            name=self.scenario_name,
            tags=self.scenario_tags,
            steps=tuple(self.steps),
        ))
        self.scenario_name = None
        self.steps = []
        self.last_primary = None


def parse_feature(source: str) -> Feature:
    """Parse Gherkin text into a Feature, raising GherkinParseError otherwise.

    CRLF line endings are normalized to LF first. And/But steps carry the
    resolved keyword of the nearest preceding primary step.
    """
    return _Parser(source).parse()


def render_feature(feature: Feature) -> str:
    """Emit canonical text: 2-space nesting, one blank line between scenarios."""
    lines = [f"Feature: {feature.name}"]
    if feature.description:
        lines.extend(f"  {text}" for text in feature.description.split("\n"))
    for scenario in feature.scenarios:
        lines.append("")
        if scenario.tags:
            lines.append("  " + " ".join(scenario.tags))
        lines.append(f"  Scenario: {scenario.name}")
        lines.extend(f"    {step.keyword.value} {step.text}" for step in scenario.steps)
    return "\n".join(lines) + "\n"


def scenario_stats(feature: Feature) -> ScenarioStats:
    """Count scenarios and steps, split by resolved keyword."""
    by_keyword = {kw.value: 0 for kw in PRIMARY_KEYWORDS}
    step_count = 0
    for scenario in feature.scenarios:
        for step in scenario.steps:
            by_keyword[step.resolved_keyword.value] += 1
            step_count += 1
    return ScenarioStats(
        scenario_count=len(feature.scenarios),
        step_count=step_count,
        steps_by_resolved_keyword=by_keyword,
    )
