"""Task templates and arrival-pattern generators.

A scenario's demand side is a list of TaskSpec produced ahead of the run from
a template library and one of five arrival patterns: phased (diurnal), uniform,
sinusoidal, bursty, and plain Poisson. Generation is a pure function of the
RNG stream it is handed, so equal seeds give byte-equal schedules.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .network import DEFAULT_PHASES, DiurnalPhase, phase_at
from .types import CommProfile, Region, TaskSpec

# Deadline slack multiplier ranges, drawn uniformly. Critical tasks get
# tight-but-feasible deadlines; batch work gets room.
CRITICAL_SLACK_RANGE = (1.5, 2.5)
DEFAULT_SLACK_RANGE = (2.0, 4.0)


@dataclass(frozen=True)
class TaskTemplate:
    name: str
    base_hours: float
    gpus_required: int
    mem_per_gpu_gb: float
    comm_profile: CommProfile
    comm_intensity: float          # ω: how strongly bandwidth shortfall slows the task
    data_volume_gb: float
    critical_probability: float
    slack_range: tuple[float, float] = DEFAULT_SLACK_RANGE


# The four stock workloads, from sub-hour inference to multi-day distributed
# training. Long jobs are capped at 12 h of reference-GPU compute.
DEFAULT_TEMPLATES: tuple[TaskTemplate, ...] = (
    TaskTemplate("CriticalInference", base_hours=0.1, gpus_required=1, mem_per_gpu_gb=6.0,
                 comm_profile=CommProfile.POINT_TO_POINT, comm_intensity=0.2,
                 data_volume_gb=2.0, critical_probability=1.0),
    TaskTemplate("BertFinetune", base_hours=6.0, gpus_required=1, mem_per_gpu_gb=10.0,
                 comm_profile=CommProfile.COMPUTE_HEAVY, comm_intensity=0.1,
                 data_volume_gb=20.0, critical_probability=0.1),
    TaskTemplate("Llama7bFinetune", base_hours=12.0, gpus_required=16, mem_per_gpu_gb=20.0,
                 comm_profile=CommProfile.ALL_REDUCE, comm_intensity=0.7,
                 data_volume_gb=50.0, critical_probability=0.05),
    TaskTemplate("ResNetTraining", base_hours=12.0, gpus_required=32, mem_per_gpu_gb=10.0,
                 comm_profile=CommProfile.RING, comm_intensity=0.9,
                 data_volume_gb=100.0, critical_probability=0.05),
)

TEMPLATES_BY_NAME = {t.name: t for t in DEFAULT_TEMPLATES}

PATTERN_KINDS = ("phased", "uniform", "sinusoidal", "bursty", "poisson")

# Bursty pattern shape: three one-hour windows per day, each carrying 20% of
# the day's volume, on top of a 0.2x background rate. That shape sums to 80%
# of the nominal volume, so rates are rescaled by 1.25 to keep the expected
# count at n_tasks.
BURST_HOURS = (2.0, 10.0, 18.0)
BURST_WIDTH_H = 1.0
BURST_BACKGROUND_FRACTION = 0.2
BURST_WINDOW_VOLUME_FRACTION = 0.2

SINUSOID_AMPLITUDE = 0.8


@dataclass(frozen=True)
class WorkloadPattern:
    kind: str                                  # one of PATTERN_KINDS
    phases: tuple[DiurnalPhase, ...] = DEFAULT_PHASES

    def __post_init__(self):
        if self.kind not in PATTERN_KINDS:
            raise ValueError(f"unknown workload pattern {self.kind!r}")


def assign_deadline(arrival_s: float, base_hours: float, slack: float) -> float:
    """Deadline = arrival + slack x the task's reference-GPU runtime."""
    return arrival_s + slack * base_hours * 3600.0


def _draw_slack(rng: np.random.Generator, critical: bool,
                template_range: tuple[float, float]) -> float:
    lo, hi = CRITICAL_SLACK_RANGE if critical else template_range
    return float(rng.uniform(lo, hi))


def _thinned_poisson(rng: np.random.Generator, rate_fn, rate_max: float,
                     horizon_s: float) -> list[float]:
    """Inhomogeneous Poisson arrivals on [0, horizon) by thinning."""
    assert rate_max > 0.0
    arrivals = []
    t = 0.0
    while True:
        t += rng.exponential(1.0 / rate_max)
        if t >= horizon_s:
            return arrivals
        if rng.random() < rate_fn(t) / rate_max:
            arrivals.append(t)


def _burst_rate_factor(t_s: float) -> float:
    """Relative arrival rate of the bursty pattern (before normalization)."""
    h = (t_s / 3600.0) % 24.0
    rate = BURST_BACKGROUND_FRACTION
    for start in BURST_HOURS:
        if start <= h < start + BURST_WIDTH_H:
            # One window emits 20% of a day's tasks in BURST_WIDTH_H hours.
            rate += BURST_WINDOW_VOLUME_FRACTION * 24.0 / BURST_WIDTH_H
            break
    return rate


def _arrival_times(pattern: WorkloadPattern, n_tasks: int, horizon_s: float,
                   rng: np.random.Generator) -> list[float]:
    kind = pattern.kind
    if kind == "uniform":
        return sorted(float(x) for x in rng.uniform(0.0, horizon_s, size=n_tasks))

    if kind == "poisson":
        lam = n_tasks / horizon_s
        arrivals = []
        t = 0.0
        while True:
            t += rng.exponential(1.0 / lam)
            if t >= horizon_s:
                return arrivals
            arrivals.append(t)

    if kind == "sinusoidal":
        period_s = 24.0 * 3600.0
        omega = 2.0 * math.pi / period_s
        # Normalize so the integral of the rate over the horizon is n_tasks,
        # horizon need not be a whole number of days.
        integral = horizon_s + SINUSOID_AMPLITUDE / omega * (1.0 - math.cos(omega * horizon_s))
        lam0 = n_tasks / integral
        rate = lambda t: lam0 * (1.0 + SINUSOID_AMPLITUDE * math.sin(omega * t))
        return _thinned_poisson(rng, rate, lam0 * (1.0 + SINUSOID_AMPLITUDE), horizon_s)

    if kind == "bursty":
        # Mean of the shape factor over a day is 0.8; rescale to hit n_tasks.
        shape_mean = (
            BURST_BACKGROUND_FRACTION
            + len(BURST_HOURS) * BURST_WINDOW_VOLUME_FRACTION
        )
        lam0 = n_tasks / horizon_s
        scale = lam0 / shape_mean
        rate = lambda t: scale * _burst_rate_factor(t)
        rate_max = scale * (
            BURST_BACKGROUND_FRACTION
            + BURST_WINDOW_VOLUME_FRACTION * 24.0 / BURST_WIDTH_H
        )
        return _thinned_poisson(rng, rate, rate_max, horizon_s)

    if kind == "phased":
        weights = {p.name: p.arrival_rate_weight for p in pattern.phases}
        # Piecewise-constant weight; integrate over the horizon hour by hour.
        total_weight_s = 0.0
        t = 0.0
        while t < horizon_s:
            step = min(3600.0, horizon_s - t)
            total_weight_s += weights[phase_at(t / 3600.0, pattern.phases).name] * step
            t += step
        scale = n_tasks / total_weight_s
        rate = lambda t: scale * weights[phase_at(t / 3600.0, pattern.phases).name]
        rate_max = scale * max(weights.values())
        return _thinned_poisson(rng, rate, rate_max, horizon_s)

    raise ValueError(f"unknown workload pattern {kind!r}")


def _pick_template(pattern: WorkloadPattern, arrival_s: float,
                   templates: Sequence[TaskTemplate],
                   rng: np.random.Generator) -> TaskTemplate:
    if pattern.kind == "phased":
        phase = phase_at(arrival_s / 3600.0, pattern.phases)
        names = [t.name for t in templates]
        probs = np.array([phase.task_mix.get(n, 0.0) for n in names])
        if probs.sum() > 0.0:
            probs = probs / probs.sum()
            idx = int(rng.choice(len(templates), p=probs))
            return templates[idx]
    return templates[int(rng.integers(len(templates)))]


def generate(pattern: WorkloadPattern, n_tasks: int, horizon_hours: float,
             rng: np.random.Generator | int,
             templates: Sequence[TaskTemplate] = DEFAULT_TEMPLATES,
             region_weights: Optional[dict[Region, float]] = None,
             regions: Sequence[Region] = tuple(Region)) -> list[TaskSpec]:
    """Produce the full, arrival-sorted task schedule for a scenario.

    Criticality is a coin flip per task: the uniform pattern uses a fair coin
    (all properties uniform), the rest use the template's own probability.
    """
    assert n_tasks > 0
    if isinstance(rng, int):
        rng = np.random.default_rng(rng)

    arrivals = _arrival_times(pattern, n_tasks, horizon_hours * 3600.0, rng)

    regions = list(regions)
    if region_weights:
        probs = np.array([region_weights.get(r, 0.0) for r in regions], dtype=float)
        probs = probs / probs.sum()
    else:
        probs = None

    specs = []
    for task_id, arrival in enumerate(arrivals):
        template = _pick_template(pattern, arrival, templates, rng)
        if pattern.kind == "uniform":
            critical = bool(rng.random() < 0.5)
        else:
            critical = bool(rng.random() < template.critical_probability)
        if probs is None:
            data_region = regions[int(rng.integers(len(regions)))]
        else:
            data_region = regions[int(rng.choice(len(regions), p=probs))]
        slack = _draw_slack(rng, critical, template.slack_range)
        specs.append(TaskSpec(
            task_id=task_id,
            template=template.name,
            gpus_required=template.gpus_required,
            mem_per_gpu_gb=template.mem_per_gpu_gb,
            base_hours=template.base_hours,
            arrival_s=arrival,
            deadline_s=assign_deadline(arrival, template.base_hours, slack),
            critical=critical,
            comm_profile=template.comm_profile,
            comm_intensity=template.comm_intensity,
            data_region=data_region,
            data_volume_gb=template.data_volume_gb,
        ))
    return specs
