"""Discrete-event simulator of a community GPU network.

Heterogeneous consumer GPUs spread over six regions serve deadline-driven
ML tasks under node churn, diurnal bandwidth cycles, and link congestion.
Pluggable schedulers (greedy, random, round-robin, or an external agent over
a JSON-lines protocol) place tasks; accounting turns outcomes into rewards,
costs, and run metrics.
"""

from .config import ScenarioConfig, preset
from .engine import Engine
from .types import GPU_CATALOG, Region, TaskStatus

__version__ = "0.1.0"

__all__ = [
    "Engine",
    "GPU_CATALOG",
    "Region",
    "ScenarioConfig",
    "TaskStatus",
    "preset",
    "__version__",
]
