from __future__ import annotations

import json
from pathlib import Path

import pytest

import covjudge
from covjudge.corpus import (
    Corpus,
    CorpusItem,
    GroundTruth,
    HttpMethod,
    JiraTicket,
    load_corpus,
)

MINIMAL_FEATURE = """\
Feature: Demo
  Scenario: First
    Given a precondition
    When an action happens
    Then an outcome is visible
"""


def make_ticket(ticket_id: str = "KB-42", method: str = "GET", **overrides) -> JiraTicket:
    fields = dict(
        id=ticket_id,
        title=f"Ticket {ticket_id}",
        description=f"Endpoint behavior for {ticket_id}.",
        acceptance_criteria=("Returns 200 on success",),
        success_scenarios=("Happy path works",),
        error_scenarios=("Unknown id yields 404",),
        http_method=HttpMethod(method),
    )
    fields.update(overrides)
    return JiraTicket(**fields)


def make_item(ticket_id: str = "KB-42", method: str = "GET",
              truth: float = 77.0, feature: str = MINIMAL_FEATURE) -> CorpusItem:
    return CorpusItem(
        ticket=make_ticket(ticket_id, method),
        gherkin_source=feature,
        ground_truth=GroundTruth(
            ticket_id=ticket_id,
            scenario_completeness=None,
            acceptance_alignment=None,
            method_concerns=None,
            assertion_quality=None,
            normalized_score=truth,
        ),
    )


def make_corpus(truths: dict[str, float]) -> Corpus:
    items = tuple(make_item(tid, truth=score) for tid, score in sorted(truths.items()))
    return Corpus(items=items, lookup={item.ticket.id: i for i, item in enumerate(items)})


def write_corpus_item(
    root: Path,
    ticket_id: str,
    method: str = "GET",
    dims: tuple[float, float, float, float] | None = (8, 7, 9, 6),
    normalized: float | None = None,
    feature: str = MINIMAL_FEATURE,
    dirname: str | None = None,
    ticket_overrides: dict | None = None,
    annotation_ticket_id: str | None = None,
) -> Path:
    """Write one corpus item directory; returns its path."""
    directory = root / (dirname or ticket_id)
    directory.mkdir(parents=True)
    ticket = {
        "id": ticket_id,
        "title": f"Ticket {ticket_id}",
        "description": f"Endpoint behavior for {ticket_id}.",
        "acceptance_criteria": ["Returns 200 on success"],
        "success_scenarios": ["Happy path works"],
        "error_scenarios": ["Unknown id yields 404"],
        "http_method": method,
    }
    ticket.update(ticket_overrides or {})
    (directory / "ticket.json").write_text(json.dumps(ticket), encoding="utf-8")
    (directory / "script.feature").write_text(feature, encoding="utf-8")
    if normalized is None:
        assert dims is not None
        normalized = 4 * dims[0] + 3 * dims[1] + 2 * dims[2] + dims[3]
    annotation: dict = {
        "ticket_id": annotation_ticket_id or ticket_id,
        "normalized_score": normalized,
    }
    if dims is not None:
        annotation["dimensions"] = {
            "scenario_completeness": dims[0],
            "acceptance_alignment": dims[1],
            "method_concerns": dims[2],
            "assertion_quality": dims[3],
        }
    (directory / "annotation.json").write_text(json.dumps(annotation), encoding="utf-8")
    return directory


@pytest.fixture(scope="session")
def mini_corpus_dir() -> Path:
    return covjudge.mini_corpus_path()


@pytest.fixture(scope="session")
def mini_corpus(mini_corpus_dir):
    return load_corpus(mini_corpus_dir)
