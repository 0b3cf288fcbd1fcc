"""Core domain types: regions, GPU hardware catalog, tasks, and simulator events."""

from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass, field
from typing import Optional

# Throughput of the reference card (RTX 4090) used to normalize task durations:
# a task's base_hours is its runtime on one reference GPU with ideal networking.
REFERENCE_TFLOPS = 82.6

# Reference bandwidth (Gbit/s) against which link quality is judged.
REFERENCE_BANDWIDTH_GBPS = 10.0


class Region(enum.IntEnum):
    """Geographic regions hosting community GPUs. Order is the canonical
    one-hot encoding order and must not be rearranged."""

    US_EAST = 0
    US_WEST = 1
    EU_WEST = 2
    EU_CENTRAL = 3
    ASIA_EAST = 4
    ASIA_SOUTH = 5

    @property
    def label(self) -> str:
        return _REGION_LABELS[self]


_REGION_LABELS = {
    Region.US_EAST: "US-East",
    Region.US_WEST: "US-West",
    Region.EU_WEST: "EU-West",
    Region.EU_CENTRAL: "EU-Central",
    Region.ASIA_EAST: "Asia-East",
    Region.ASIA_SOUTH: "Asia-South",
}

# Representative datacenter coordinates (lat, lon in degrees) per region.
# Used only to derive inter-region propagation latency.
REGION_COORDS: dict[Region, tuple[float, float]] = {
    Region.US_EAST: (39.04, -77.49),      # Ashburn, VA
    Region.US_WEST: (45.60, -121.18),     # The Dalles, OR
    Region.EU_WEST: (53.34, -6.27),       # Dublin
    Region.EU_CENTRAL: (50.11, 8.68),     # Frankfurt
    Region.ASIA_EAST: (35.69, 139.69),    # Tokyo
    Region.ASIA_SOUTH: (19.08, 72.88),    # Mumbai
}

# Per-GB egress price charged when task data leaves its home region.
EGRESS_USD_PER_GB: dict[Region, float] = {
    Region.US_EAST: 0.02,
    Region.US_WEST: 0.02,
    Region.EU_WEST: 0.03,
    Region.EU_CENTRAL: 0.03,
    Region.ASIA_EAST: 0.05,
    Region.ASIA_SOUTH: 0.05,
}


@dataclass(frozen=True)
class GpuModel:
    """A GPU hardware class as offered on the network."""

    name: str
    memory_gb: float
    tflops: float               # sustained mixed-precision throughput
    hourly_cost_usd: float
    reference_quantity: int     # population share used when building fleets


# The hardware mix of the network, largest card first.
GPU_CATALOG: tuple[GpuModel, ...] = (
    GpuModel("H100", memory_gb=80.0, tflops=989.0, hourly_cost_usd=2.26, reference_quantity=45),
    GpuModel("RTX 4090", memory_gb=24.0, tflops=82.6, hourly_cost_usd=0.40, reference_quantity=2064),
    GpuModel("RTX 3080", memory_gb=12.0, tflops=29.8, hourly_cost_usd=0.09, reference_quantity=128),
    GpuModel("RTX 3060", memory_gb=12.0, tflops=12.4, hourly_cost_usd=0.06, reference_quantity=654),
)

GPU_MODELS_BY_NAME: dict[str, GpuModel] = {m.name: m for m in GPU_CATALOG}

# Fastest card in the catalog; used for best-case runtime estimates.
MAX_CATALOG_TFLOPS = max(m.tflops for m in GPU_CATALOG)
MAX_HOURLY_COST = max(m.hourly_cost_usd for m in GPU_CATALOG)


def best_feasible_tflops(mem_per_gpu_gb: float) -> float:
    """Throughput of the fastest catalog model whose memory fits the task.

    Falls back to the largest-memory model when nothing fits, so callers
    always get a positive number.
    """
    feasible = [m.tflops for m in GPU_CATALOG if m.memory_gb >= mem_per_gpu_gb]
    if feasible:
        return max(feasible)
    return max(GPU_CATALOG, key=lambda m: m.memory_gb).tflops


class CommProfile(enum.IntEnum):
    """Communication pattern of a task. Order is the one-hot encoding order."""

    POINT_TO_POINT = 0
    COMPUTE_HEAVY = 1
    ALL_REDUCE = 2
    RING = 3


class TaskStatus(enum.Enum):
    PENDING = "Pending"
    STAGING = "Staging"
    RUNNING = "Running"
    COMPLETED_ON_TIME = "CompletedOnTime"
    COMPLETED_LATE = "CompletedLate"
    FAILED = "Failed"
    EXPIRED = "Expired"


TERMINAL_STATUSES = frozenset(
    {
        TaskStatus.COMPLETED_ON_TIME,
        TaskStatus.COMPLETED_LATE,
        TaskStatus.FAILED,
        TaskStatus.EXPIRED,
    }
)


@dataclass
class GpuNode:
    """One rentable GPU in the fleet."""

    gpu_id: int
    model: GpuModel
    region: Region
    dropout_per_hour: float      # Poisson failure rate, events/hour
    online: bool = True
    busy_task: Optional[int] = None   # task id currently holding this GPU
    last_offline_at: Optional[float] = None   # sim seconds; None = never failed
    online_since: float = 0.0    # sim seconds of the most recent recovery (or start)

    @property
    def idle(self) -> bool:
        return self.online and self.busy_task is None


@dataclass(frozen=True)
class TaskSpec:
    """Immutable description of a submitted task."""

    task_id: int
    template: str
    gpus_required: int
    mem_per_gpu_gb: float
    base_hours: float            # runtime on one reference GPU, ideal network
    arrival_s: float
    deadline_s: float
    critical: bool
    comm_profile: CommProfile
    comm_intensity: float        # weight of bandwidth shortfall in the slowdown factor
    data_region: Region
    data_volume_gb: float


@dataclass
class TaskRecord:
    """Mutable lifecycle state of a task inside the simulator."""

    spec: TaskSpec
    status: TaskStatus = TaskStatus.PENDING
    assigned_gpus: list[int] = field(default_factory=list)
    dispatched_at: Optional[float] = None
    running_at: Optional[float] = None       # staging finished, compute began
    finished_at: Optional[float] = None      # any terminal transition
    # Values frozen at dispatch time:
    p_comm: Optional[float] = None
    staging_s: Optional[float] = None
    compute_s: Optional[float] = None
    bandwidth_penalty: Optional[float] = None
    latency_to_data_ms: Optional[float] = None
    # Terminal accounting:
    cost_usd: float = 0.0
    reward: Optional[float] = None

    @property
    def task_id(self) -> int:
        return self.spec.task_id

    @property
    def terminal(self) -> bool:
        return self.status in TERMINAL_STATUSES


class EventKind(enum.IntEnum):
    """Every kind of event the simulator processes. The integer values only
    matter for stable reprs; ordering between simultaneous events is decided
    by insertion sequence, never by kind."""

    TASK_ARRIVAL = 0
    STAGE_COMPLETE = 1
    TASK_COMPLETE = 2
    GPU_FAILURE = 3
    GPU_RECOVERY = 4
    CONGESTION_START = 5
    CONGESTION_END = 6
    PHASE_CHANGE = 7
    SCHEDULING_TICK = 8
    METRICS_TICK = 9
    HORIZON_END = 10


@dataclass(order=True)
class SimEvent:
    """Heap entry. Lexicographic (time, seq) ordering makes simultaneous
    events fire in insertion order, which pins down run determinism."""

    time_s: float
    seq: int
    kind: EventKind = field(compare=False)
    payload: dict = field(compare=False, default_factory=dict)


class EventSequencer:
    """Hands out the monotone insertion counter for SimEvent ordering."""

    def __init__(self) -> None:
        self._counter = itertools.count()

    def next(self) -> int:
        return next(self._counter)
