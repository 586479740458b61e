"""Operator entry point: run benchmarks, render reports, project and compare costs.

Exit codes are stable: 0 success, 1 usage/config, 2 data, 3 provider.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from dataclasses import dataclass
from pathlib import Path

from . import ledger as ledger_mod
from . import metrics as metrics_mod
from .corpus import Corpus, CorpusError, load_corpus
from .judge import RetryPolicy, run_benchmark
from .metrics import MeanStd, MetricsReport
from .prompt import (
    DEFAULT_GUIDELINES,
    DEFAULT_RUBRIC,
    Guidelines,
    Rubric,
    load_guidelines,
    load_rubric,
)
from .provider import ModelConfig, ProviderAuthError, check_auth, provider_for

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_PROVIDER = 3


class UsageError(Exception):
    pass


class ConfigError(Exception):
    pass


class DataError(Exception):
    pass


@dataclass
class RunConfig:
    corpus_path: Path
    ledger_path: Path
    models: list[ModelConfig]
    runs: int = 5
    parallelism: int = 1
    seed: int = 0
    retry: RetryPolicy = RetryPolicy()
    rubric: Rubric = DEFAULT_RUBRIC
    guidelines: Guidelines = DEFAULT_GUIDELINES

    def __post_init__(self):
        if self.runs < 1:
            raise ConfigError("runs must be >= 1")
        if self.parallelism < 1:
            raise ConfigError("parallelism must be >= 1")
        if not self.models:
            raise ConfigError("config declares no models")


def load_run_config(path: str | Path) -> RunConfig:
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a JSON object")

    try:
        models = [ledger_mod.config_from_dict(m) for m in data.get("models", [])]
    except (KeyError, ValueError, TypeError) as exc:
        raise ConfigError(f"{path}: bad model entry ({exc})") from exc

    retry_raw = data.get("retry", {})
    try:
        retry = RetryPolicy(
            max_attempts=int(retry_raw.get("max_attempts", 5)),
            backoff_base=float(retry_raw.get("backoff_base", 1.0)),
            backoff_multiplier=float(retry_raw.get("backoff_multiplier", 2.0)),
            jitter=bool(retry_raw.get("jitter", True)),
        )
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"{path}: bad retry policy ({exc})") from exc

    base = path.parent

    def resolve(value: str) -> Path:
        p = Path(value)
        if not p.is_absolute():
            p = base / p
        return Path(os.path.normpath(p))

    try:
        rubric = DEFAULT_RUBRIC
        if data.get("rubric"):
            rubric = load_rubric(resolve(data["rubric"]))
        guidelines = DEFAULT_GUIDELINES
        if data.get("guidelines"):
            guidelines = load_guidelines(resolve(data["guidelines"]))
        return RunConfig(
            corpus_path=resolve(data["corpus"]),
            ledger_path=resolve(data["ledger"]),
            models=models,
            runs=int(data.get("runs", 5)),
            parallelism=int(data.get("parallelism", 1)),
            seed=int(data.get("seed", 0)),
            retry=retry,
            rubric=rubric,
            guidelines=guidelines,
        )
    except KeyError as exc:
        raise ConfigError(f"{path}: missing required field {exc}") from exc
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc


# --- run ----------------------------------------------------------------------

def cmd_run(config_path: str, resume: bool = False, quiet: bool = False) -> int:
    config = load_run_config(config_path)
    try:
        corpus = load_corpus(config.corpus_path)
    except CorpusError as exc:
        raise DataError(f"corpus error: {exc}") from exc

    for model in config.models:
        try:
            check_auth(model)
        except ProviderAuthError as exc:
            raise ProviderAuthError(f"provider auth error: {exc}") from exc

    header = ledger_mod.make_header(corpus, config.models, config.seed)
    if config.ledger_path.exists():
        if not resume:
            raise DataError(
                f"ledger already exists: {config.ledger_path} (pass --resume to continue it)"
            )
        writer = ledger_mod.LedgerWriter.resume(config.ledger_path)
        if writer.header.corpus_digest != header.corpus_digest:
            writer.close()
            raise DataError("ledger was written against a different corpus")
        if writer.header.config_digest != header.config_digest:
            writer.close()
            raise DataError("ledger was written against different model configs")
    else:
        writer = ledger_mod.LedgerWriter.create(config.ledger_path, header)

    providers = {
        model.id: provider_for(model, base_seed=config.seed) for model in config.models
    }

    def progress(done: int, planned: int, first_successes: int) -> None:
        if quiet:
            return
        ecr = 100.0 * first_successes / max(1, done - summary_skipped[0])
        print(f"\r{done}/{planned} records  ECR@1 {ecr:5.1f}%", end="", file=sys.stderr)

    summary_skipped = [0]
    try:
        with writer:
            summary_skipped[0] = len(writer.keys())
            summary = run_benchmark(
                corpus=corpus,
                configs=config.models,
                runs=config.runs,
                policy=config.retry,
                parallelism=config.parallelism,
                ledger=writer,
                providers=providers,
                base_seed=config.seed,
                rubric=config.rubric,
                guidelines=config.guidelines,
                progress=progress,
            )
    finally:
        for provider in providers.values():
            close = getattr(provider, "close", None)
            if close is not None:
                close()
    if not quiet:
        print(file=sys.stderr)
    print(
        f"wrote {summary.records_written} records "
        f"({summary.skipped} already present, {summary.failures} incomplete) "
        f"in {summary.wall_time:.1f}s -> {config.ledger_path}"
    )
    return EXIT_OK


# --- report -------------------------------------------------------------------

_TEXT_DECIMALS = {
    "maae": 2, "aps": 2, "pmr": 1, "cmr": 1, "ecr_at_1": 1,
    "mean_attempts": 2, "cost_per_1k": 2, "adjusted_cost_per_1k": 2,
    "measured_cost_per_1k": 2,
}

# direction used to mark the best value per column
_BEST_IS_LOW = {"maae", "mean_attempts", "cost_per_1k", "adjusted_cost_per_1k",
                "measured_cost_per_1k"}

_TABLE_COLUMNS = (
    ("maae", "MAAE"),
    ("aps", "APS"),
    ("pmr", "PMR"),
    ("cmr", "CMR"),
    ("ecr_at_1", "ECR@1"),
    ("mean_attempts", "Attempts"),
    ("adjusted_cost_per_1k", "Cost/1K"),
)

_FOOTNOTES = (
    "Accuracy metrics cover completed evaluations only.",
    "Mean attempts divides total API calls by completed evaluations.",
    "Cost/1K is the retry-adjusted cost: nominal cost/1K x 100/ECR@1, "
    "aggregated per run. * marks the best value per column.",
)


def format_mean_std(cell: MeanStd | None, decimals: int) -> str:
    if cell is None:
        return "-"
    return f"{cell.mean:.{decimals}f}±{cell.std:.{decimals}f}"


def _best_config_ids(report: MetricsReport, metric: str) -> set[str]:
    values = {
        entry.config_id: entry.metrics[metric].mean
        for entry in report.configs
        if entry.metrics[metric] is not None
    }
    if not values:
        return set()
    target = min(values.values()) if metric in _BEST_IS_LOW else max(values.values())
    return {cid for cid, v in values.items() if v == target}


def render_text_table(report: MetricsReport) -> str:
    best = {metric: _best_config_ids(report, metric) for metric, _ in _TABLE_COLUMNS}
    header = ["Config", "Runs"] + [label for _, label in _TABLE_COLUMNS]
    rows = [header]
    for entry in report.configs:
        row = [entry.config_id, str(entry.runs)]
        for metric, _ in _TABLE_COLUMNS:
            text = format_mean_std(entry.metrics[metric], _TEXT_DECIMALS[metric])
            if entry.config_id in best[metric]:
                text += "*"
            row.append(text)
        rows.append(row)
    widths = [max(len(r[i]) for r in rows) for i in range(len(header))]
    lines = []
    for i, row in enumerate(rows):
        lines.append("  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip())
        if i == 0:
            lines.append("  ".join("-" * w for w in widths))
    lines.append("")
    lines.extend(_FOOTNOTES)
    return "\n".join(lines)


def report_to_dict(report: MetricsReport) -> dict:
    configs = {}
    for entry in report.configs:
        configs[entry.config_id] = {
            "runs": entry.runs,
            "records": entry.records,
            "incomplete": entry.incomplete,
            "metrics": {
                name: None if cell is None else {"mean": cell.mean, "std": cell.std}
                for name, cell in entry.metrics.items()
            },
            "adjusted_cost_from_means": entry.adjusted_cost_from_means,
        }
    return {"close_threshold": report.close_threshold, "configs": configs}


def write_report_csv(report: MetricsReport, path: Path) -> None:
    fieldnames = ["config_id", "runs", "records", "incomplete"]
    for name in metrics_mod.REPORT_METRICS:
        fieldnames += [f"{name}_mean", f"{name}_std"]
    fieldnames.append("adjusted_cost_from_means")
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=fieldnames)
        writer.writeheader()
        for entry in report.configs:
            row: dict = {
                "config_id": entry.config_id,
                "runs": entry.runs,
                "records": entry.records,
                "incomplete": entry.incomplete,
                "adjusted_cost_from_means": entry.adjusted_cost_from_means,
            }
            for name, cell in entry.metrics.items():
                row[f"{name}_mean"] = "" if cell is None else repr(cell.mean)
                row[f"{name}_std"] = "" if cell is None else repr(cell.std)
            writer.writerow(row)


def build_report_from_ledger(ledger_path: str | Path, corpus: Corpus) -> MetricsReport:
    run_ledger = ledger_mod.load_ledger(ledger_path)
    actual = ledger_mod.corpus_digest(corpus)
    if run_ledger.header.corpus_digest != actual:
        raise DataError("ledger and corpus do not match (digest mismatch)")
    known = {c.id for c in run_ledger.header.configs}
    missing = sorted({e.config_id for e in run_ledger.entries} - known)
    if missing:
        raise DataError(f"missing pricing for configs: {missing}")
    return metrics_mod.build_report(
        run_ledger.entries, corpus, list(run_ledger.header.configs)
    )


def cmd_report(
    ledger_path: str,
    corpus_path: str,
    csv_path: str | None = None,
    json_path: str | None = None,
) -> int:
    try:
        corpus = load_corpus(corpus_path)
    except CorpusError as exc:
        raise DataError(f"corpus error: {exc}") from exc
    report = build_report_from_ledger(ledger_path, corpus)
    print(render_text_table(report))
    if csv_path:
        write_report_csv(report, Path(csv_path))
    if json_path:
        Path(json_path).write_text(
            json.dumps(report_to_dict(report), indent=2) + "\n", encoding="utf-8"
        )
    return EXIT_OK


# --- project ------------------------------------------------------------------

@dataclass(frozen=True)
class Projection:
    cost_per_1k: float
    monthly_volume: int
    monthly_cost: float
    annual_cost: float
    comparison_cost_per_1k: float | None = None
    cost_ratio: float | None = None

    @property
    def ratio_display(self) -> str | None:
        if self.cost_ratio is None:
            return None
        return f"{round(self.cost_ratio)}×"


def project_costs(
    cost_per_1k: float,
    monthly_volume: int,
    comparison_cost_per_1k: float | None = None,
) -> Projection:
    if cost_per_1k <= 0 or monthly_volume <= 0:
        raise ValueError("cost and volume must be positive")
    if comparison_cost_per_1k is not None and comparison_cost_per_1k <= 0:
        raise ValueError("comparison cost must be positive")
    monthly = cost_per_1k * monthly_volume / 1000.0
    ratio = None
    if comparison_cost_per_1k is not None:
        ratio = comparison_cost_per_1k / cost_per_1k
    return Projection(
        cost_per_1k=cost_per_1k,
        monthly_volume=monthly_volume,
        monthly_cost=monthly,
        annual_cost=monthly * 12.0,
        comparison_cost_per_1k=comparison_cost_per_1k,
        cost_ratio=ratio,
    )


def cmd_project(cost: float, volume: int, versus: float | None = None) -> int:
    try:
        projection = project_costs(cost, volume, versus)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    print(f"monthly: ${round(projection.monthly_cost):,}")
    print(f"annual:  ${round(projection.annual_cost):,}")
    if projection.ratio_display is not None:
        print(f"comparison is {projection.ratio_display} the base cost "
              f"(${projection.comparison_cost_per_1k:,.2f} vs ${projection.cost_per_1k:,.2f} per 1K)")
    return EXIT_OK


# --- compare ------------------------------------------------------------------

@dataclass(frozen=True)
class ComparisonDelta:
    config_a: str
    config_b: str
    maae_delta_pp: float
    ecr_delta_pp: float | None
    cost_delta_usd: float | None
    cost_delta_pct: float | None

    @property
    def cost_direction(self) -> str | None:
        if self.cost_delta_usd is None:
            return None
        return "savings" if self.cost_delta_usd < 0 else "increase"


def _metric_mean(config_entry: dict, name: str) -> float | None:
    cell = config_entry.get("metrics", {}).get(name)
    if cell is None:
        return None
    return float(cell["mean"])


def compare_configs(report_doc: dict, config_a: str, config_b: str) -> ComparisonDelta:
    """Deltas from config_a to config_b on unrounded report means.

    Cost percentage is relative to config_a, which matches the usual framing:
    savings as a share of the larger (starting) cost, increases as a share of
    the smaller (starting) cost.
    """
    configs = report_doc.get("configs", {})
    for name in (config_a, config_b):
        if name not in configs:
            raise KeyError(f"config '{name}' not present in report")
    a, b = configs[config_a], configs[config_b]

    maae_a, maae_b = _metric_mean(a, "maae"), _metric_mean(b, "maae")
    if maae_a is None or maae_b is None:
        raise ValueError("both configs need accuracy metrics to compare")
    ecr_a, ecr_b = _metric_mean(a, "ecr_at_1"), _metric_mean(b, "ecr_at_1")
    cost_a = _metric_mean(a, "adjusted_cost_per_1k")
    cost_b = _metric_mean(b, "adjusted_cost_per_1k")

    cost_delta = cost_pct = None
    if cost_a is not None and cost_b is not None:
        cost_delta = cost_b - cost_a
        if cost_a > 0:
            cost_pct = 100.0 * (cost_b - cost_a) / cost_a
    return ComparisonDelta(
        config_a=config_a,
        config_b=config_b,
        maae_delta_pp=maae_b - maae_a,
        ecr_delta_pp=None if ecr_a is None or ecr_b is None else ecr_b - ecr_a,
        cost_delta_usd=cost_delta,
        cost_delta_pct=cost_pct,
    )


def cmd_compare(report_path: str, config_a: str, config_b: str) -> int:
    try:
        report_doc = json.loads(Path(report_path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise DataError(f"report file not found: {report_path}") from None
    except json.JSONDecodeError as exc:
        raise DataError(f"{report_path}: invalid JSON ({exc})") from exc
    try:
        delta = compare_configs(report_doc, config_a, config_b)
    except (KeyError, ValueError) as exc:
        raise DataError(str(exc)) from exc

    print(f"{config_a} -> {config_b}")
    print(f"  MAAE:  {delta.maae_delta_pp:+.2f}pp")
    if delta.ecr_delta_pp is not None:
        print(f"  ECR@1: {delta.ecr_delta_pp:+.1f}pp")
    if delta.cost_delta_usd is not None:
        print(
            f"  Cost:  {delta.cost_delta_pct:+.1f}% ({delta.cost_direction}), "
            f"${delta.cost_delta_usd:+,.2f} per 1K"
        )
    return EXIT_OK


# --- argument parsing -----------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):  # map argparse usage errors onto exit code 1
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="covjudge",
                     description="Benchmark LLM judges of Gherkin test coverage.")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="execute a benchmark run from a config file")
    run.add_argument("--config", required=True, help="path to a run-config JSON file")
    run.add_argument("--resume", action="store_true",
                     help="continue an interrupted run against an existing ledger")
    run.add_argument("--quiet", action="store_true", help="suppress progress output")

    report = sub.add_parser("report", help="render metrics from a run ledger")
    report.add_argument("--ledger", required=True)
    report.add_argument("--corpus", required=True)
    report.add_argument("--csv", help="also write machine-readable CSV here")
    report.add_argument("--json", help="also write the structured report here")

    project = sub.add_parser("project", help="project deployment costs")
    project.add_argument("--cost", required=True, type=float, help="USD per 1K evaluations")
    project.add_argument("--volume", required=True, type=int, help="evaluations per month")
    project.add_argument("--versus", type=float, help="comparison USD per 1K")

    compare = sub.add_parser("compare", help="diff two configs in a JSON report")
    compare.add_argument("--report", required=True)
    compare.add_argument("--a", required=True, dest="config_a")
    compare.add_argument("--b", required=True, dest="config_b")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "run":
            return cmd_run(args.config, resume=args.resume, quiet=args.quiet)
        if args.command == "report":
            return cmd_report(args.ledger, args.corpus, args.csv, args.json)
        if args.command == "project":
            return cmd_project(args.cost, args.volume, args.versus)
        if args.command == "compare":
            return cmd_compare(args.report, args.config_a, args.config_b)
        raise UsageError(f"unknown command {args.command!r}")
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, CorpusError, ledger_mod.LedgerError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ProviderAuthError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PROVIDER


if __name__ == "__main__":
    sys.exit(main())
