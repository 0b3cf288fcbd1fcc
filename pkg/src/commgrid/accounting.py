"""Reward function, cost ledger, and run-level metrics.

The reward is a weighted sum over the task's terminal indicators, its
normalized cost, and its communication slowdown. Costs combine GPU-hours at
each card's hourly rate with a one-shot egress charge when data leaves its
home region. Metrics aggregate per-run counters into a stable JSON schema.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .types import (
    EGRESS_USD_PER_GB,
    GPU_CATALOG,
    GpuNode,
    REFERENCE_TFLOPS,
    Region,
    TaskSpec,
    TaskStatus,
    best_feasible_tflops,
)

# Normalized cost is clamped to this range before entering the reward.
C_NORM_MAX = 2.0

BANDWIDTH_PENALTY_BINS = (0.0, 0.05, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0)


@dataclass(frozen=True)
class RewardWeights:
    w_comp: float = 1.0
    w_deadline: float = 1.0
    w_fail: float = -1.0
    w_cost: float = -0.2
    w_comm: float = -0.5


@dataclass
class TaskOutcome:
    """Terminal accounting record for one task."""

    task_id: int
    status: TaskStatus
    finished_at: float
    cost_usd: float
    c_norm: float
    p_comm: float
    turnaround_s: float
    ideal_s: float
    components: dict[str, float] = field(default_factory=dict)
    reward: Optional[float] = None       # None for Expired (no decision was made)
    critical: bool = False


def reward(outcome: TaskOutcome, weights: RewardWeights) -> float:
    """Weighted terminal reward. Expired tasks carry no reward by contract."""
    r, _ = reward_components(outcome.status, outcome.c_norm, outcome.p_comm, weights)
    return r


def reward_components(status: TaskStatus, c_norm: float, p_comm: float,
                      weights: RewardWeights) -> tuple[float, dict[str, float]]:
    """Reward and its per-term breakdown for a terminal, non-expired status."""
    if status is TaskStatus.EXPIRED:
        raise ValueError("expired tasks receive no reward")
    i_ontime = 1.0 if status is TaskStatus.COMPLETED_ON_TIME else 0.0
    i_late = 1.0 if status is TaskStatus.COMPLETED_LATE else 0.0
    i_fail = 1.0 if status is TaskStatus.FAILED else 0.0
    if i_ontime + i_late + i_fail != 1.0:
        raise ValueError(f"non-terminal status {status}")
    components = {
        "comp": weights.w_comp * (i_ontime + i_late),
        "deadline": weights.w_deadline * i_ontime,
        "fail": weights.w_fail * i_fail,
        "cost": weights.w_cost * c_norm,
        "comm": weights.w_comm * (p_comm - 1.0),
    }
    return sum(components.values()), components


def budget_ref_usd(gpus_required: int, mem_per_gpu_gb: float, base_hours: float) -> float:
    """Reference budget: the cheapest way to run the task on one model class.

    For each memory-feasible model, the task would occupy gpus_required cards
    for base_hours scaled by the model's speed relative to the reference card;
    the budget is the cheapest such bill. Used to normalize actual cost.
    """
    feasible = [m for m in GPU_CATALOG if m.memory_gb >= mem_per_gpu_gb]
    if not feasible:
        feasible = [max(GPU_CATALOG, key=lambda m: m.memory_gb)]
    return min(
        gpus_required * m.hourly_cost_usd * base_hours * REFERENCE_TFLOPS / m.tflops
        for m in feasible
    )


def cost(task: TaskSpec, gpu_nodes: Sequence[GpuNode], billed_hours: float,
         egress_rates: Optional[dict[Region, float]] = None) -> tuple[float, float]:
    """Actual bill and normalized cost for a (possibly partial) run.

    GPU time is billed per card from dispatch to the terminal instant. The
    egress charge applies once, only when some assigned card sits outside the
    data's home region.
    """
    assert billed_hours >= 0.0
    rates = egress_rates if egress_rates is not None else EGRESS_USD_PER_GB
    usd = sum(n.model.hourly_cost_usd for n in gpu_nodes) * billed_hours
    if any(n.region != task.data_region for n in gpu_nodes):
        usd += task.data_volume_gb * rates[task.data_region]
    ref = budget_ref_usd(task.gpus_required, task.mem_per_gpu_gb, task.base_hours)
    c_norm = min(C_NORM_MAX, max(0.0, usd / ref)) if ref > 0.0 else 0.0
    return usd, c_norm


def ideal_seconds(task: TaskSpec) -> float:
    """Zero-wait, zero-staging runtime on the best memory-feasible card."""
    return task.base_hours * 3600.0 * REFERENCE_TFLOPS / best_feasible_tflops(task.mem_per_gpu_gb)


def slowdown(turnaround_s: float, ideal_s: float) -> float:
    return max(1.0, turnaround_s / ideal_s)


def _mean(xs: list[float]) -> Optional[float]:
    return float(np.mean(xs)) if xs else None


def _p95(xs: list[float]) -> Optional[float]:
    return float(np.percentile(xs, 95)) if xs else None


def _class_block(records) -> dict:
    arrived = len(records)
    completed = [r for r in records if r.status in (TaskStatus.COMPLETED_ON_TIME, TaskStatus.COMPLETED_LATE)]
    on_time = sum(1 for r in completed if r.status is TaskStatus.COMPLETED_ON_TIME)
    slowdowns = [
        slowdown(r.finished_at - r.spec.arrival_s, ideal_seconds(r.spec)) for r in completed
    ]
    return {
        "arrived": arrived,
        "completed": len(completed),
        "completion_rate": (len(completed) / arrived) if arrived else None,
        "deadline_satisfaction": (on_time / len(completed)) if completed else None,
        "mean_slowdown": _mean(slowdowns),
    }


def build_metrics(records, horizon_hours: float,
                  latency_samples_ms: Iterable[float] = (),
                  extras: Optional[dict] = None) -> dict:
    """Aggregate terminal task records into the run report.

    All records must be terminal. Rates with empty denominators are reported
    as null rather than zero so downstream plots can distinguish "no data"
    from "all failed".
    """
    records = list(records)
    by_status = {s: 0 for s in TaskStatus}
    for r in records:
        assert r.terminal, f"task {r.task_id} not terminal at metrics time"
        by_status[r.status] += 1

    arrived = len(records)
    on_time = by_status[TaskStatus.COMPLETED_ON_TIME]
    late = by_status[TaskStatus.COMPLETED_LATE]
    completed = on_time + late

    completed_records = [
        r for r in records if r.status in (TaskStatus.COMPLETED_ON_TIME, TaskStatus.COMPLETED_LATE)
    ]
    slowdowns = [
        slowdown(r.finished_at - r.spec.arrival_s, ideal_seconds(r.spec))
        for r in completed_records
    ]
    penalties = [r.bandwidth_penalty for r in records if r.bandwidth_penalty is not None]
    hist_counts, _ = np.histogram(penalties, bins=BANDWIDTH_PENALTY_BINS)

    report = {
        "completion_rate": (completed / arrived) if arrived else None,
        "deadline_satisfaction": (on_time / completed) if completed else None,
        "goodput_per_hour": completed / horizon_hours,
        "mean_slowdown": _mean(slowdowns),
        "p95_slowdown": _p95(slowdowns),
        "per_class": {
            "critical": _class_block([r for r in records if r.spec.critical]),
            "normal": _class_block([r for r in records if not r.spec.critical]),
        },
        "bandwidth_penalty_hist": {
            "bin_edges": list(BANDWIDTH_PENALTY_BINS),
            "counts": [int(c) for c in hist_counts],
        },
        "cost_total_usd": math.fsum(r.cost_usd for r in records),
        "counts": {
            "arrived": arrived,
            "completed_on_time": on_time,
            "completed_late": late,
            "failed": by_status[TaskStatus.FAILED],
            "expired": by_status[TaskStatus.EXPIRED],
        },
        "horizon_hours": horizon_hours,
        "latency_ms_samples": sorted(float(x) for x in latency_samples_ms),
    }
    if extras:
        report.update(extras)
    return report
