"""Scenario runner, staleness measurement and metric export."""

from .cli import main
from .metrics import COLUMNS, MetricsReport, MetricsRow, report_export
from .runner import ScenarioRun, run_scenario
from .script import (
    MeasureSpec,
    OutageSpec,
    PartitionSpec,
    PlacementSpec,
    ScenarioScript,
    WorkloadSpec,
    load_script,
    script_from_dict,
)
from .staleness import (
    StalenessSample,
    brute_force_staleness,
    check_ryw,
    check_strong_reads,
    gated_violations,
    measure_staleness,
    staleness_samples,
)

__all__ = [
    "COLUMNS",
    "MeasureSpec",
    "MetricsReport",
    "MetricsRow",
    "OutageSpec",
    "PartitionSpec",
    "PlacementSpec",
    "ScenarioRun",
    "ScenarioScript",
    "StalenessSample",
    "WorkloadSpec",
    "brute_force_staleness",
    "check_ryw",
    "check_strong_reads",
    "gated_violations",
    "load_script",
    "main",
    "measure_staleness",
    "report_export",
    "run_scenario",
    "script_from_dict",
    "staleness_samples",
]
