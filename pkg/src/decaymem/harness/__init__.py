"""Scenario runner, decay traces and layer ablations."""

from decaymem.harness.ablation import AblationRow, AblationTable, ablate
from decaymem.harness.scenario import (Event, ProbeResult, Rubric, Scenario, ScenarioError, ScenarioReport,
                                       bundled_scenarios, distractor_block, load_scenario, parse_scenario,
                                       run_scenario)
from decaymem.harness.trace import TraceTable, reinforcement_mask, trace_decay

__all__ = [
    "AblationRow", "AblationTable", "Event", "ProbeResult", "Rubric", "Scenario", "ScenarioError",
    "ScenarioReport", "TraceTable", "ablate", "bundled_scenarios", "distractor_block", "load_scenario",
    "parse_scenario", "reinforcement_mask", "run_scenario", "trace_decay",
]
