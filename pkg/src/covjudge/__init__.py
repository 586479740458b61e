"""covjudge: benchmark harness for LLM judges of Gherkin test coverage.

Loads a corpus of requirement tickets, their Gherkin acceptance scripts and
expert coverage annotations, drives chat-completion judges over it with
retry-aware bookkeeping, and reports accuracy, reliability and cost metrics.
"""

from importlib import resources
from pathlib import Path

__version__ = "0.1.0"


def mini_corpus_path() -> Path:
    """Path of the bundled 10-item demo corpus."""
    return Path(str(resources.files("covjudge").joinpath("data", "mini_corpus")))
