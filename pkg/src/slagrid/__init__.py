"""SLA-driven distributed objects on a deterministic edge/cloud network simulator."""

from .errors import SlaGridError
from .harness import MetricsReport, load_script, run_scenario

__version__ = "0.1.0"

__all__ = ["MetricsReport", "SlaGridError", "__version__", "load_script", "run_scenario"]
