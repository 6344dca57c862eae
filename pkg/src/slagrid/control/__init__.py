"""Placement, deployment and SLA monitoring."""

from .manager import ControlPlane, Correction, Metric, SlaMetricSample
from .placement import (
    PlacementPlan,
    Placer,
    ReplicaChoice,
    estimate_failure_prob,
    replication_factor,
    reserved_slots,
    split_reservation,
)

__all__ = [
    "ControlPlane",
    "Correction",
    "Metric",
    "PlacementPlan",
    "Placer",
    "ReplicaChoice",
    "SlaMetricSample",
    "estimate_failure_prob",
    "replication_factor",
    "reserved_slots",
    "split_reservation",
]
