"""Feature encoding of scheduling decisions for an external policy.

Everything is normalized into small fixed ranges and the encoding reads only
engine state (bandwidth features use the noise-free expected value), so the
same engine state always produces the same observation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .engine import Engine
from .network import INTRA_REGION_LATENCY_MS
from .types import (
    CommProfile,
    REFERENCE_BANDWIDTH_GBPS,
    Region,
    TaskSpec,
)

TASK_FEATURE_DIM = 14
GPU_FEATURE_DIM = 16
GLOBAL_FEATURE_DIM = 6

# Normalization constants. Chosen as generous upper bounds of each quantity
# so features land in [0, 1] (trig features use [-1, 1]).
MAX_GPUS_REQUIRED = 32.0
MAX_MEMORY_GB = 80.0
MAX_DEADLINE_HOURS = 24.0
MAX_TFLOPS = 1000.0
MAX_HOURLY_COST = 2.5
MAX_LATENCY_MS = 500.0
MAX_PENDING = 100.0
MAX_EGRESS_RATE = 0.1
STALENESS_CAP_H = 24.0


def _clamp01(x: float) -> float:
    return min(1.0, max(0.0, x))


@dataclass(frozen=True)
class Observation:
    task_features: list[float]
    global_features: list[float]
    candidate_ids: list[int]             # ascending, aligned with gpu_features
    gpu_features: list[list[float]]


def encode_observation(spec: TaskSpec, candidate_ids: list[int], engine: Engine) -> Observation:
    assert candidate_ids, "cannot encode a decision with no candidates"
    now = engine.now

    task_f = [
        spec.gpus_required / MAX_GPUS_REQUIRED,
        spec.mem_per_gpu_gb / MAX_MEMORY_GB,
        _clamp01((spec.deadline_s - now) / 3600.0 / MAX_DEADLINE_HOURS),
        1.0 if spec.critical else 0.0,
    ]
    profile_onehot = [0.0] * len(CommProfile)
    profile_onehot[spec.comm_profile] = 1.0
    region_onehot = [0.0] * len(Region)
    region_onehot[spec.data_region] = 1.0
    task_f += profile_onehot + region_onehot
    assert len(task_f) == TASK_FEATURE_DIM

    gpu_rows = []
    for gid in candidate_ids:
        node = engine.nodes[gid]
        reg_onehot = [0.0] * len(Region)
        reg_onehot[node.region] = 1.0
        if node.last_offline_at is None:
            since_offline = 1.0
        else:
            since_offline = min((now - node.last_offline_at) / 3600.0, STALENESS_CAP_H) / STALENESS_CAP_H
        online_for = min((now - node.online_since) / 3600.0, STALENESS_CAP_H) / STALENESS_CAP_H
        bw = engine.network.expected_bandwidth(spec.data_region, node.region, now)
        same_region = node.region == spec.data_region
        latency = (INTRA_REGION_LATENCY_MS if same_region
                   else engine.network.latency_ms(spec.data_region, node.region))
        egress = 0.0 if same_region else engine.egress_rates[spec.data_region]
        row = [
            node.model.tflops / MAX_TFLOPS,
            node.model.memory_gb / MAX_MEMORY_GB,
            *reg_onehot,
            node.model.hourly_cost_usd / MAX_HOURLY_COST,
            (node.dropout_per_hour / engine.delta_max) if engine.delta_max > 0 else 0.0,
            since_offline,
            online_for,
            _clamp01(bw / REFERENCE_BANDWIDTH_GBPS),
            _clamp01(latency / MAX_LATENCY_MS),
            1.0 if same_region else 0.0,
            egress / MAX_EGRESS_RATE,
        ]
        assert len(row) == GPU_FEATURE_DIM
        gpu_rows.append(row)

    n = len(engine.nodes)
    hour_angle = 2.0 * math.pi * ((now / 3600.0) % 24.0) / 24.0
    global_f = [
        math.sin(hour_angle),
        math.cos(hour_angle),
        float(np.count_nonzero(engine.arr_online)) / n,
        engine.idle_count / n,
        _clamp01(engine.pending_count() / MAX_PENDING),
        engine.network.congested_fraction(now),
    ]
    assert len(global_f) == GLOBAL_FEATURE_DIM

    return Observation(
        task_features=task_f,
        global_features=global_f,
        candidate_ids=list(candidate_ids),
        gpu_features=gpu_rows,
    )
