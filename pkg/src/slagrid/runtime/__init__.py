"""Class runtimes, worker pools, storage and invocation routing."""

from .classrt import ClassRuntime, Deployment, Invocation
from .detector import FailureDetector
from .handlers import Commit, Ctx, HandlerRegistry, Invoke, Refresh, TriggerEventInfo
from .platform import ObjectDescriptor, Platform
from .storage import ClassStorage, ReadRow, StorageTrace, WriteRow
from .workers import DcWorkers, ScalerConfig

__all__ = [
    "ClassRuntime",
    "ClassStorage",
    "Commit",
    "Ctx",
    "DcWorkers",
    "Deployment",
    "FailureDetector",
    "HandlerRegistry",
    "Invocation",
    "Invoke",
    "ObjectDescriptor",
    "Platform",
    "ReadRow",
    "Refresh",
    "ScalerConfig",
    "StorageTrace",
    "TriggerEventInfo",
    "WriteRow",
]
