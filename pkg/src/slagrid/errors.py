"""Exception hierarchy shared by every slagrid module."""

from __future__ import annotations


class SlaGridError(Exception):
    """Base class for all errors raised by slagrid."""


# -- class validation -------------------------------------------------------


class ValidationError(SlaGridError):
    """A class definition or SLA record failed validation."""


class UnknownParent(ValidationError):
    pass


class InheritanceCycle(UnknownParent):
    """The parent chain loops back on itself."""


class DuplicateMember(ValidationError):
    pass


class UnknownHandler(ValidationError):
    pass


class DanglingTriggerSource(ValidationError):
    pass


class EventKindMismatch(ValidationError):
    pass


class InvalidSla(ValidationError):
    pass


class UnknownMember(ValidationError):
    pass


class TriggerCycle(ValidationError):
    """A function triggers itself on its own completion."""


# -- simulation -------------------------------------------------------------


class SimulationError(SlaGridError):
    pass


class PastTimestamp(SimulationError):
    pass


class UnknownDatacenter(SimulationError):
    pass


class InvalidPartition(SimulationError):
    pass


class OverlapWithExistingPartition(InvalidPartition):
    pass


# -- storage backends -------------------------------------------------------


class StorageError(SlaGridError):
    pass


class NotLeader(StorageError):
    def __init__(self, hint: str | None = None):
        super().__init__(f"not leader (hint={hint})")
        self.hint = hint


class LeadershipLost(StorageError):
    pass


class ProposalFailed(StorageError):
    pass


class StorageTimeout(StorageError):
    pass


class FetchFailed(StorageError):
    pass


class KindMismatch(StorageError):
    pass


class StalenessExceeded(StorageError):
    pass


class NoReplicaAvailable(StorageError):
    pass


class ReplicaUnreachable(StorageError):
    pass


class NoQualifiedReplica(StorageError):
    pass


# -- runtime ----------------------------------------------------------------


class RuntimeFault(SlaGridError):
    pass


class UnknownClass(RuntimeFault):
    pass


class UnknownObject(RuntimeFault):
    pass


class AlreadyDeleted(RuntimeFault):
    pass


class UnknownFunction(RuntimeFault):
    pass


class NoCapacity(RuntimeFault):
    pass


class HandlerError(RuntimeFault):
    pass


class UnknownRule(RuntimeFault):
    pass


class InsufficientCapacity(RuntimeFault):
    pass


class InvocationTimeout(RuntimeFault):
    """No reply came back from the executing datacenter in time."""


# -- control plane ----------------------------------------------------------


class ControlError(SlaGridError):
    pass


class NoSamples(ControlError):
    pass


class InsufficientSites(ControlError):
    pass


class InvalidTarget(ControlError):
    pass


class DeployFailed(ControlError):
    def __init__(self, dc: str, reason: str = ""):
        super().__init__(f"deploy failed at {dc}" + (f": {reason}" if reason else ""))
        self.dc = dc


# -- harness ----------------------------------------------------------------


class ScriptError(SlaGridError):
    """A scenario or class document is malformed; ``location`` names where."""

    def __init__(self, message: str, location: str = ""):
        super().__init__(f"{location}: {message}" if location else message)
        self.location = location


class IoError(SlaGridError):
    """A report could not be written."""
