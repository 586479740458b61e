"""Accuracy, reliability and cost metrics with cross-run aggregation.

Definitions, for one batch of evaluation records:

* MAAE   mean |prediction - ground truth| in percentage points
* APS    100 - MAAE
* PMR    % of predictions with zero error
* CMR    % of predictions within the close threshold (inclusive, default 5)
* ECR@1  % of evaluations whose first attempt produced a valid verdict
* mean attempts   total API calls / completed evaluations
* C_1K   1000 x mean per-evaluation cost of the successful attempt's tokens
* adjusted C_1K   C_1K x 100 / ECR@1 (retry-overhead model)
* measured C_1K   1000 x total spend across all attempts / completed

Accuracy covers completed evaluations only (failed evaluations carry no
prediction); never-completed records still feed the mean-attempts numerator.
"""

from __future__ import annotations

from dataclasses import dataclass
from statistics import fmean, stdev
from typing import Sequence

from .corpus import Corpus
from .judge import AttemptRecord, AttemptStatus, EvaluationRecord
from .provider import ModelConfig

DEFAULT_CLOSE_THRESHOLD = 5.0

ACCURACY_METRICS = ("maae", "aps", "pmr", "cmr")
RELIABILITY_METRICS = ("ecr_at_1", "mean_attempts")
COST_METRICS = ("cost_per_1k", "adjusted_cost_per_1k", "measured_cost_per_1k")
REPORT_METRICS = ACCURACY_METRICS + RELIABILITY_METRICS + COST_METRICS


@dataclass(frozen=True)
class AccuracyResult:
    maae: float
    aps: float
    pmr: float
    cmr: float
    n: int


@dataclass(frozen=True)
class ReliabilityResult:
    ecr_at_1: float
    mean_attempts: float | None  # absent when nothing completed
    completed: int
    total_calls: int


@dataclass(frozen=True)
class CostResult:
    mean_cost: float
    cost_per_1k: float
    adjusted_cost_per_1k: float | None  # absent when ECR@1 is zero
    measured_cost_per_1k: float


@dataclass(frozen=True)
class MeanStd:
    mean: float
    std: float


@dataclass(frozen=True)
class ConfigReport:
    config_id: str
    runs: int
    records: int
    incomplete: int
    metrics: dict[str, MeanStd | None]
    # retry adjustment applied to the aggregated means, exposed next to the
    # per-run-then-aggregate value for comparison
    adjusted_cost_from_means: float | None


@dataclass(frozen=True)
class MetricsReport:
    configs: tuple[ConfigReport, ...]
    close_threshold: float

    def config(self, config_id: str) -> ConfigReport:
        for entry in self.configs:
            if entry.config_id == config_id:
                return entry
        raise KeyError(config_id)


def compute_accuracy(
    predictions: Sequence[float],
    truths: Sequence[float],
    close_threshold: float = DEFAULT_CLOSE_THRESHOLD,
) -> AccuracyResult:
    if len(predictions) != len(truths):
        raise ValueError(
            f"length mismatch: {len(predictions)} predictions vs {len(truths)} truths"
        )
    if not predictions:
        raise ValueError("empty input: no predictions to score")
    errors = [abs(p - t) for p, t in zip(predictions, truths)]
    n = len(errors)
    maae = fmean(errors)
    pmr = 100.0 * sum(1 for e in errors if e == 0.0) / n
    cmr = 100.0 * sum(1 for e in errors if e <= close_threshold) / n
    return AccuracyResult(maae=maae, aps=100.0 - maae, pmr=pmr, cmr=cmr, n=n)


def compute_reliability(records: Sequence[EvaluationRecord]) -> ReliabilityResult:
    if not records:
        raise ValueError("empty input: no records")
    first = sum(1 for r in records if r.first_attempt_success)
    completed = sum(1 for r in records if r.completed)
    total_calls = sum(len(r.attempts) for r in records)
    mean_attempts = total_calls / completed if completed else None
    return ReliabilityResult(
        ecr_at_1=100.0 * first / len(records),
        mean_attempts=mean_attempts,
        completed=completed,
        total_calls=total_calls,
    )


def attempt_cost(attempt: AttemptRecord, config: ModelConfig) -> float:
    return (attempt.prompt_tokens / 1e6 * config.prompt_rate
            + attempt.completion_tokens / 1e6 * config.completion_rate)


def adjusted_cost(cost_per_1k: float, ecr_at_1: float) -> float | None:
    """Retry-overhead cost model; undefined at zero completion rate."""
    if ecr_at_1 <= 0.0:
        return None
    return cost_per_1k * 100.0 / ecr_at_1


def compute_cost(
    records: Sequence[EvaluationRecord],
    config: ModelConfig,
    ecr_at_1: float,
) -> CostResult:
    completed = [r for r in records if r.completed]
    if not completed:
        raise ValueError("zero completed evaluations: cost undefined")
    success_costs = []
    for record in completed:
        final = record.attempts[-1]
        assert final.status is AttemptStatus.SUCCESS
        success_costs.append(attempt_cost(final, config))
    mean_cost = fmean(success_costs)
    cost_per_1k = 1000.0 * mean_cost
    total_spend = sum(
        attempt_cost(attempt, config) for record in records for attempt in record.attempts
    )
    return CostResult(
        mean_cost=mean_cost,
        cost_per_1k=cost_per_1k,
        adjusted_cost_per_1k=adjusted_cost(cost_per_1k, ecr_at_1),
        measured_cost_per_1k=1000.0 * total_spend / len(completed),
    )


def aggregate_runs(per_run_values: Sequence[float]) -> MeanStd:
    """Mean and sample (n-1) standard deviation; std is 0 for a single run."""
    if not per_run_values:
        raise ValueError("empty input: nothing to aggregate")
    mean = fmean(per_run_values)
    std = stdev(per_run_values) if len(per_run_values) > 1 else 0.0
    return MeanStd(mean=mean, std=std)


def _per_run_values(
    records: Sequence[EvaluationRecord],
    corpus: Corpus,
    config: ModelConfig,
    close_threshold: float,
) -> dict[str, list[float]]:
    by_run: dict[int, list[EvaluationRecord]] = {}
    for record in records:
        by_run.setdefault(record.run_index, []).append(record)

    values: dict[str, list[float]] = {name: [] for name in REPORT_METRICS}
    for run_index in sorted(by_run):
        run_records = by_run[run_index]
        reliability = compute_reliability(run_records)
        values["ecr_at_1"].append(reliability.ecr_at_1)
        if reliability.mean_attempts is not None:
            values["mean_attempts"].append(reliability.mean_attempts)

        done = [r for r in run_records if r.completed]
        if done:
            accuracy = compute_accuracy(
                [r.verdict.coverage_percentage for r in done],
                [corpus.get(r.ticket_id).ground_truth.normalized_score for r in done],
                close_threshold,
            )
            values["maae"].append(accuracy.maae)
            values["aps"].append(accuracy.aps)
            values["pmr"].append(accuracy.pmr)
            values["cmr"].append(accuracy.cmr)
            cost = compute_cost(run_records, config, reliability.ecr_at_1)
            values["cost_per_1k"].append(cost.cost_per_1k)
            if cost.adjusted_cost_per_1k is not None:
                values["adjusted_cost_per_1k"].append(cost.adjusted_cost_per_1k)
            values["measured_cost_per_1k"].append(cost.measured_cost_per_1k)
    return values


def build_report(
    records: Sequence[EvaluationRecord],
    corpus: Corpus,
    configs: Sequence[ModelConfig],
    close_threshold: float = DEFAULT_CLOSE_THRESHOLD,
) -> MetricsReport:
    """Per-config mean +/- std over runs for the full metric suite."""
    by_config: dict[str, list[EvaluationRecord]] = {}
    for record in records:
        by_config.setdefault(record.config_id, []).append(record)

    config_by_id = {config.id: config for config in configs}
    missing = sorted(set(by_config) - set(config_by_id))
    if missing:
        raise ValueError(f"records reference configs without pricing: {missing}")

    reports = []
    for config_id in sorted(by_config):
        config = config_by_id[config_id]
        config_records = by_config[config_id]
        values = _per_run_values(config_records, corpus, config, close_threshold)
        metrics: dict[str, MeanStd | None] = {}
        for name in REPORT_METRICS:
            metrics[name] = aggregate_runs(values[name]) if values[name] else None

        from_means = None
        if metrics["cost_per_1k"] is not None and metrics["ecr_at_1"] is not None:
            from_means = adjusted_cost(metrics["cost_per_1k"].mean, metrics["ecr_at_1"].mean)

        reports.append(ConfigReport(
            config_id=config_id,
            runs=len({r.run_index for r in config_records}),
            records=len(config_records),
            incomplete=sum(1 for r in config_records if not r.completed),
            metrics=metrics,
            adjusted_cost_from_means=from_means,
        ))
    return MetricsReport(configs=tuple(reports), close_threshold=close_threshold)
