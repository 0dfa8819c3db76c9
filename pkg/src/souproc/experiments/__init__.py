"""Seeded, replicated statistical checks of the limit theorems."""
from __future__ import annotations

from typing import Sequence

from .core import (PassRule, ReplicateError, ReplicateSummary, RunResult, Scenario,
                   TrajectoryRecord, evaluate_rules, run_replicates)
from .scenarios import KINDS, make_scenario, scenario_names


def aggregate(scenario: Scenario, summaries: Sequence[ReplicateSummary]) -> RunResult:
    kind = KINDS[scenario.name]
    # aggregate the serialized form so saved outputs reproduce verdicts exactly
    summaries = [ReplicateSummary.from_dict(s.to_dict()) for s in summaries]
    stats = kind.aggregate(scenario, summaries)
    verdicts = evaluate_rules(scenario.pass_rules, stats)
    return RunResult(scenario, list(summaries), [], stats, verdicts)


def run_scenario(scenario: Scenario, parallelism: int = 1) -> RunResult:
    kind = KINDS[scenario.name]
    summaries, trajectories = run_replicates(scenario, kind.replicate, parallelism)
    result = aggregate(scenario, summaries)
    result.trajectories = trajectories
    return result


__all__ = ["PassRule", "ReplicateError", "ReplicateSummary", "RunResult", "Scenario",
           "TrajectoryRecord", "KINDS", "aggregate", "evaluate_rules", "make_scenario",
           "run_replicates", "run_scenario", "scenario_names"]
