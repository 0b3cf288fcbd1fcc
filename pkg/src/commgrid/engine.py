"""Seeded discrete-event engine owning the clock, the fleet, and task state.

Events pop in (time, insertion-seq) order off a binary heap, which pins the
whole run down to the seed: same scenario + seed means the same event trace,
the same RNG consumption, and byte-identical reports. Five independent RNG
streams (churn, workload, network, scheduling, agent-sampling) keep the
subsystems from perturbing each other.
"""

from __future__ import annotations

import heapq
import itertools
import logging
import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from . import accounting, scheduling, workload
from .config import ScenarioConfig
from .network import NetworkModel, bandwidth_penalty
from .types import (
    EGRESS_USD_PER_GB,
    GPU_MODELS_BY_NAME,
    EventKind,
    GpuNode,
    REFERENCE_TFLOPS,
    Region,
    SimEvent,
    TaskRecord,
    TaskSpec,
    TaskStatus,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class DispatchReceipt:
    task_id: int
    gpu_ids: tuple[int, ...]
    staging_s: float
    compute_s: float
    predicted_finish_s: float
    est_cost_usd: float
    p_comm: float


def execution_time(task: TaskSpec, nodes: Sequence[GpuNode], p_comm: float) -> float:
    """Hours of wall compute: reference hours scaled to the slowest assigned
    card (synchronous steps bottleneck on it) times the frozen comm factor."""
    min_tflops = min(n.model.tflops for n in nodes)
    return task.base_hours * (REFERENCE_TFLOPS / min_tflops) * p_comm


def apportion(weights: Sequence[float], total: int) -> list[int]:
    """Largest-remainder split of `total` into integer counts ∝ weights."""
    s = float(sum(weights))
    assert s > 0
    quotas = [w / s * total for w in weights]
    counts = [int(math.floor(q)) for q in quotas]
    short = total - sum(counts)
    order = sorted(range(len(weights)), key=lambda i: (-(quotas[i] - counts[i]), i))
    for i in order[:short]:
        counts[i] += 1
    return counts


def interleave(counts: Sequence[int]) -> list[int]:
    """Spread index i exactly counts[i] times over the output, evenly mixed
    (highest-quota-first rounds), so no single block hogs a range of ids."""
    remaining = list(counts)
    assigned = [0] * len(counts)
    out = []
    for _ in range(sum(counts)):
        best = max(
            (i for i in range(len(counts)) if remaining[i] > 0),
            key=lambda i: (counts[i] / (assigned[i] + 1), -i),
        )
        out.append(best)
        assigned[best] += 1
        remaining[best] -= 1
    return out


def build_fleet(cfg: ScenarioConfig) -> list[GpuNode]:
    fleet = cfg.fleet
    model_names = list(fleet.model_mix)
    model_counts = apportion([fleet.model_mix[n] for n in model_names], fleet.n_gpus)
    regions = list(fleet.regions)
    if fleet.region_mix is None:
        region_weights = [1.0] * len(regions)
    else:
        region_weights = [fleet.region_mix.get(r.label, 0.0) for r in regions]
    region_counts = apportion(region_weights, fleet.n_gpus)

    model_seq = interleave(model_counts)
    region_seq = interleave(region_counts)
    rate = fleet.base_dropout_per_hour * fleet.dropout_multiplier
    nodes = []
    for gid in range(fleet.n_gpus):
        nodes.append(GpuNode(
            gpu_id=gid,
            model=GPU_MODELS_BY_NAME[model_names[model_seq[gid]]],
            region=regions[region_seq[gid]],
            dropout_per_hour=rate,
        ))
    return nodes


class Engine:
    """One simulation run. Single-threaded; all mutation happens in event
    handlers or dispatch() calls made from inside them."""

    def __init__(self, scenario: ScenarioConfig, seed: Optional[int] = None,
                 strategy: Optional[scheduling.Strategy] = None):
        scenario.validate()
        self.scenario = scenario
        self.seed = scenario.seed if seed is None else seed

        ss = np.random.SeedSequence(self.seed)
        churn_ss, workload_ss, network_ss, sched_ss, agent_ss = ss.spawn(5)
        self.rng_churn = np.random.default_rng(churn_ss)
        self.rng_workload = np.random.default_rng(workload_ss)
        self.rng_network = np.random.default_rng(network_ss)
        self.rng_scheduling = np.random.default_rng(sched_ss)
        self.rng_agent = np.random.default_rng(agent_ss)

        self.now = 0.0
        self.horizon_s = scenario.workload.horizon_hours * 3600.0
        self.finished = False
        self._seq = itertools.count()
        self._heap: list[SimEvent] = []

        self.nodes = build_fleet(scenario)
        n = len(self.nodes)
        self.arr_online = np.ones(n, dtype=bool)
        self.arr_busy = np.zeros(n, dtype=bool)
        self.arr_mem = np.array([nd.model.memory_gb for nd in self.nodes])
        self.idle_count = n
        self.delta_max = max(nd.dropout_per_hour for nd in self.nodes)
        self.egress_rates = scenario.egress_rates if scenario.egress_rates is not None else EGRESS_USD_PER_GB

        self.network = NetworkModel(scenario.network, self.rng_network,
                                    regions=scenario.fleet.regions)

        pattern = workload.WorkloadPattern(scenario.workload.pattern, scenario.network.phases)
        region_weights = None
        if scenario.workload.data_region_mix:
            region_weights = {
                r: scenario.workload.data_region_mix.get(r.label, 0.0)
                for r in scenario.fleet.regions
            }
        self.task_specs = workload.generate(
            pattern, scenario.workload.n_tasks, scenario.workload.horizon_hours,
            self.rng_workload, templates=scenario.workload.templates,
            region_weights=region_weights, regions=scenario.fleet.regions,
        )

        self.tasks: dict[int, TaskRecord] = {}
        self.pending_critical: list[TaskRecord] = []
        self.pending_normal: list[TaskRecord] = []
        self.outcomes: dict[int, accounting.TaskOutcome] = {}
        self._outcome_buffer: list[accounting.TaskOutcome] = []
        self.latency_samples_ms: list[float] = []
        self.failure_events = 0
        self.util_timeline: list[dict] = []

        # Hooks: trace rows for the CLI, outcomes for the environment server.
        self.trace_hook: Optional[Callable[[dict], None]] = None
        self.outcome_listener: Optional[Callable[[accounting.TaskOutcome], None]] = None

        if strategy is not None:
            self.strategy = strategy
        elif scenario.scheduler == "agent":
            self.strategy = None          # the serving session attaches itself
        else:
            self.strategy = scheduling.make_baseline(
                scenario.scheduler, self.nodes, self.rng_scheduling)

        self._prime_events()

    # -- setup -------------------------------------------------------------

    def _push(self, time_s: float, kind: EventKind, **payload) -> None:
        heapq.heappush(self._heap, SimEvent(time_s, next(self._seq), kind, payload))

    def _prime_events(self) -> None:
        for spec in self.task_specs:
            self._push(spec.arrival_s, EventKind.TASK_ARRIVAL, task_id=spec.task_id)

        for node in self.nodes:
            if node.dropout_per_hour > 0.0:
                dt = self.rng_churn.exponential(1.0 / node.dropout_per_hour) * 3600.0
                if dt < self.horizon_s:
                    self._push(dt, EventKind.GPU_FAILURE, gpu_id=node.gpu_id)

        # Congestion can be drawn up front: the hourly sweep is pure RNG.
        for hour in range(int(math.ceil(self.scenario.workload.horizon_hours))):
            for draw in self.network.draw_congestion(hour * 3600.0):
                self._push(draw.start_s, EventKind.CONGESTION_START,
                           link=draw.link, factor=draw.factor, end_s=draw.end_s)
                self._push(draw.end_s, EventKind.CONGESTION_END, link=draw.link)

        for hour in range(6, int(self.scenario.workload.horizon_hours), 6):
            self._push(hour * 3600.0, EventKind.PHASE_CHANGE)

        tick = self.scenario.scheduling_tick_s
        if tick < self.horizon_s:
            self._push(tick, EventKind.SCHEDULING_TICK)
        mtick = self.scenario.metrics_tick_s
        if 0 < mtick < self.horizon_s:
            self._push(mtick, EventKind.METRICS_TICK)

        self._push(self.horizon_s, EventKind.HORIZON_END)

    # -- event loop ----------------------------------------------------------

    def run_until(self, t_end: float) -> list[accounting.TaskOutcome]:
        """Process all events with time <= t_end; return the terminal
        outcomes produced in the interval, in event order."""
        assert t_end >= self.now, "clock cannot run backwards"
        while self._heap and self._heap[0].time_s <= t_end:
            ev = heapq.heappop(self._heap)
            self.now = ev.time_s
            self._handle(ev)
        self.now = max(self.now, t_end)
        emitted = self._outcome_buffer
        self._outcome_buffer = []
        return emitted

    def run(self) -> list[accounting.TaskOutcome]:
        return self.run_until(self.horizon_s)

    def _handle(self, ev: SimEvent) -> None:
        if self.finished:
            return
        kind = ev.kind
        if kind is EventKind.TASK_ARRIVAL:
            self._on_arrival(ev.payload["task_id"])
        elif kind is EventKind.STAGE_COMPLETE:
            self._on_stage_complete(ev.payload["task_id"])
        elif kind is EventKind.TASK_COMPLETE:
            self._on_task_complete(ev.payload["task_id"])
        elif kind is EventKind.GPU_FAILURE:
            self._on_gpu_failure(ev.payload["gpu_id"])
        elif kind is EventKind.GPU_RECOVERY:
            self._on_gpu_recovery(ev.payload["gpu_id"])
        elif kind is EventKind.CONGESTION_START:
            self._on_congestion_start(ev.payload)
        elif kind is EventKind.CONGESTION_END:
            self._on_congestion_end(ev.payload["link"])
        elif kind is EventKind.PHASE_CHANGE:
            self._trace("phase_change", status=self.network.phase_name(self.now))
        elif kind is EventKind.SCHEDULING_TICK:
            self.scan_pending()
            nxt = self.now + self.scenario.scheduling_tick_s
            if nxt < self.horizon_s:
                self._push(nxt, EventKind.SCHEDULING_TICK)
        elif kind is EventKind.METRICS_TICK:
            self._snapshot_utilization()
            nxt = self.now + self.scenario.metrics_tick_s
            if nxt < self.horizon_s:
                self._push(nxt, EventKind.METRICS_TICK)
        elif kind is EventKind.HORIZON_END:
            self._on_horizon_end()
        else:
            raise AssertionError(f"unhandled event kind {kind}")

    # -- handlers ------------------------------------------------------------

    def _on_arrival(self, task_id: int) -> None:
        rec = TaskRecord(spec=self.task_specs[task_id])
        self.tasks[task_id] = rec
        if rec.spec.critical:
            self.pending_critical.append(rec)
        else:
            self.pending_normal.append(rec)
        self._trace("task_arrival", task=rec)
        self.scan_pending()

    def _on_stage_complete(self, task_id: int) -> None:
        rec = self.tasks[task_id]
        if rec.status is not TaskStatus.STAGING:
            return    # failed while staging; stale event
        rec.status = TaskStatus.RUNNING
        rec.running_at = self.now
        self._push(self.now + rec.compute_s, EventKind.TASK_COMPLETE, task_id=task_id)
        self._trace("stage_complete", task=rec)

    def _on_task_complete(self, task_id: int) -> None:
        rec = self.tasks[task_id]
        if rec.status is not TaskStatus.RUNNING:
            return    # failed mid-run; stale event
        status = (TaskStatus.COMPLETED_ON_TIME if self.now <= rec.spec.deadline_s
                  else TaskStatus.COMPLETED_LATE)
        self._finish(rec, status, "task_complete")
        self.scan_pending()

    def _on_gpu_failure(self, gpu_id: int) -> None:
        node = self.nodes[gpu_id]
        self.failure_events += 1
        # The failure clock is an absolute-time Poisson process per GPU:
        # the next arrival is drawn now, whatever state the card is in.
        # (Rate 0 only occurs under manual fault injection; no next draw then.)
        if node.dropout_per_hour > 0.0:
            dt = self.rng_churn.exponential(1.0 / node.dropout_per_hour) * 3600.0
            if self.now + dt < self.horizon_s:
                self._push(self.now + dt, EventKind.GPU_FAILURE, gpu_id=gpu_id)

        if not node.online:
            return    # already down; the pending recovery still stands
        node.online = False
        node.last_offline_at = self.now
        self.arr_online[gpu_id] = False
        if node.busy_task is None:
            self.idle_count -= 1
        victim = node.busy_task
        self._trace("gpu_failure", gpus=[gpu_id])
        if victim is not None:
            self._finish(self.tasks[victim], TaskStatus.FAILED, "task_failed")
        downtime = self.rng_churn.exponential(0.5) * 3600.0
        self._push(self.now + downtime, EventKind.GPU_RECOVERY, gpu_id=gpu_id)

    def _on_gpu_recovery(self, gpu_id: int) -> None:
        node = self.nodes[gpu_id]
        assert not node.online, "recovery for an online GPU"
        node.online = True
        node.online_since = self.now
        self.arr_online[gpu_id] = True
        self.idle_count += 1
        self._trace("gpu_recovery", gpus=[gpu_id])
        self.scan_pending()

    def _on_congestion_start(self, payload: dict) -> None:
        from .network import CongestionDraw
        draw = CongestionDraw(payload["link"], payload["factor"], self.now, payload["end_s"])
        self.network.begin_congestion(draw)
        self._trace("congestion_start", gpus=None,
                    status=f"{payload['link'][0].label}~{payload['link'][1].label}")

    def _on_congestion_end(self, link: tuple[Region, Region]) -> None:
        if self.network.end_congestion(link, self.now):
            self._trace("congestion_end", status=f"{link[0].label}~{link[1].label}")

    def _on_horizon_end(self) -> None:
        # Every non-terminal task resolves now: never-dispatched work expires,
        # in-flight work counts as failed and is billed to the horizon.
        for task_id in sorted(self.tasks):
            rec = self.tasks[task_id]
            if rec.status is TaskStatus.PENDING:
                self._expire(rec)
            elif rec.status in (TaskStatus.STAGING, TaskStatus.RUNNING):
                self._finish(rec, TaskStatus.FAILED, "task_failed")
        self.pending_critical.clear()
        self.pending_normal.clear()
        self._trace("horizon_end")
        self.finished = True
        self._heap.clear()

    # -- scheduling ------------------------------------------------------------

    def filter_candidates(self, mem_per_gpu_gb: float) -> list[int]:
        mask = self.arr_online & ~self.arr_busy & (self.arr_mem >= mem_per_gpu_gb)
        return np.nonzero(mask)[0].tolist()

    def scan_pending(self) -> None:
        """Try to place pending tasks, most critical first, FIFO within class.

        Tasks that can no longer finish by their deadline even on the best
        card expire here. Candidate sets are cached per memory requirement
        within one scan and invalidated on every dispatch.
        """
        if self.finished:
            return
        cache: dict[float, list[int]] = {}
        for queue in (self.pending_critical, self.pending_normal):
            kept = []
            for rec in queue:
                if rec.status is not TaskStatus.PENDING:
                    continue
                spec = rec.spec
                floor_s = scheduling.min_possible_hours(spec.base_hours) * 3600.0
                if spec.deadline_s < self.now + floor_s:
                    self._expire(rec)
                    continue
                k = spec.gpus_required
                if self.idle_count < k or self.strategy is None:
                    kept.append(rec)
                    continue
                cands = cache.get(spec.mem_per_gpu_gb)
                if cands is None:
                    cands = self.filter_candidates(spec.mem_per_gpu_gb)
                    cache[spec.mem_per_gpu_gb] = cands
                if len(cands) < k:
                    kept.append(rec)
                    continue
                chosen = self.strategy.select(spec, cands, self)
                if chosen is None:
                    kept.append(rec)
                    continue
                self.dispatch(spec.task_id, chosen)
                cache.clear()
            queue[:] = kept

    def dispatch(self, task_id: int, gpu_ids: Sequence[int]) -> DispatchReceipt:
        """Start a task on the given GPUs. Validates every precondition and
        raises DispatchRejected (no state change) on the first violation."""
        rec = self.tasks.get(task_id)
        if rec is None:
            raise scheduling.DispatchRejected("unknown-task")
        if rec.status is not TaskStatus.PENDING:
            raise scheduling.DispatchRejected(f"task-not-pending ({rec.status.value})")
        spec = rec.spec
        gpu_ids = list(gpu_ids)
        if len(gpu_ids) != spec.gpus_required:
            raise scheduling.DispatchRejected(
                f"wrong-gpu-count (need {spec.gpus_required}, got {len(gpu_ids)})")
        if len(set(gpu_ids)) != len(gpu_ids):
            raise scheduling.DispatchRejected("duplicate-gpu")
        for gid in gpu_ids:
            if not 0 <= gid < len(self.nodes):
                raise scheduling.DispatchRejected("unknown-gpu", gid)
            node = self.nodes[gid]
            if not node.online:
                raise scheduling.DispatchRejected("offline", gid)
            if node.busy_task is not None:
                raise scheduling.DispatchRejected("busy", gid)
            if node.model.memory_gb < spec.mem_per_gpu_gb:
                raise scheduling.DispatchRejected("insufficient-memory", gid)

        chosen = sorted(gpu_ids)
        nodes = [self.nodes[g] for g in chosen]

        staging_s = 0.0
        if spec.data_volume_gb > 0.0:
            for region in sorted({n.region for n in nodes}):
                bw = self.network.effective_bandwidth(spec.data_region, region, self.now)
                staging_s = max(staging_s, spec.data_volume_gb * 8.0 / bw)

        p_comm, b_eff = self.network.comm_penalty(
            spec.comm_profile, spec.comm_intensity, spec.data_region,
            [(n.gpu_id, n.region) for n in nodes], self.now)
        compute_s = execution_time(spec, nodes, p_comm) * 3600.0

        rec.status = TaskStatus.STAGING
        rec.assigned_gpus = chosen
        rec.dispatched_at = self.now
        rec.p_comm = p_comm
        rec.staging_s = staging_s
        rec.compute_s = compute_s
        rec.bandwidth_penalty = bandwidth_penalty(b_eff)
        rec.latency_to_data_ms = max(
            self.network.latency_ms(spec.data_region, n.region) for n in nodes)
        self.latency_samples_ms.append(rec.latency_to_data_ms)

        for node in nodes:
            node.busy_task = task_id
            self.arr_busy[node.gpu_id] = True
        self.idle_count -= len(nodes)

        self._push(self.now + staging_s, EventKind.STAGE_COMPLETE, task_id=task_id)

        est_hours = (staging_s + compute_s) / 3600.0
        est_cost, _ = accounting.cost(spec, nodes, est_hours, self.egress_rates)
        self._trace("task_dispatch", task=rec)
        return DispatchReceipt(
            task_id=task_id, gpu_ids=tuple(gpu_ids), staging_s=staging_s,
            compute_s=compute_s, predicted_finish_s=self.now + staging_s + compute_s,
            est_cost_usd=est_cost, p_comm=p_comm,
        )

    # -- terminal transitions ---------------------------------------------------

    def _release_gpus(self, rec: TaskRecord) -> None:
        for gid in rec.assigned_gpus:
            node = self.nodes[gid]
            if node.busy_task == rec.task_id:
                node.busy_task = None
                self.arr_busy[gid] = False
                if node.online:
                    self.idle_count += 1

    def _finish(self, rec: TaskRecord, status: TaskStatus, trace_event: str) -> None:
        assert status in (TaskStatus.COMPLETED_ON_TIME, TaskStatus.COMPLETED_LATE,
                          TaskStatus.FAILED)
        rec.status = status
        rec.finished_at = self.now
        nodes = [self.nodes[g] for g in rec.assigned_gpus]
        self._release_gpus(rec)
        billed_hours = (self.now - rec.dispatched_at) / 3600.0
        usd, c_norm = accounting.cost(rec.spec, nodes, billed_hours, self.egress_rates)
        rec.cost_usd = usd
        r, components = accounting.reward_components(
            status, c_norm, rec.p_comm, self.scenario.weights)
        rec.reward = r
        outcome = accounting.TaskOutcome(
            task_id=rec.task_id, status=status, finished_at=self.now,
            cost_usd=usd, c_norm=c_norm, p_comm=rec.p_comm,
            turnaround_s=self.now - rec.spec.arrival_s,
            ideal_s=accounting.ideal_seconds(rec.spec),
            components=components, reward=r, critical=rec.spec.critical,
        )
        self._emit(outcome)
        self._trace(trace_event, task=rec)

    def _expire(self, rec: TaskRecord) -> None:
        rec.status = TaskStatus.EXPIRED
        rec.finished_at = self.now
        outcome = accounting.TaskOutcome(
            task_id=rec.task_id, status=TaskStatus.EXPIRED, finished_at=self.now,
            cost_usd=0.0, c_norm=0.0, p_comm=1.0,
            turnaround_s=self.now - rec.spec.arrival_s,
            ideal_s=accounting.ideal_seconds(rec.spec),
            components={}, reward=None, critical=rec.spec.critical,
        )
        self._emit(outcome)
        self._trace("task_expired", task=rec)

    def _emit(self, outcome: accounting.TaskOutcome) -> None:
        self.outcomes[outcome.task_id] = outcome
        self._outcome_buffer.append(outcome)
        if self.outcome_listener is not None:
            self.outcome_listener(outcome)

    # -- reporting ------------------------------------------------------------

    def _snapshot_utilization(self) -> None:
        n = len(self.nodes)
        self.util_timeline.append({
            "t_hours": self.now / 3600.0,
            "online_fraction": float(np.count_nonzero(self.arr_online)) / n,
            "busy_fraction": float(np.count_nonzero(self.arr_busy)) / n,
        })

    def pending_count(self) -> int:
        return len(self.pending_critical) + len(self.pending_normal)

    def check_occupancy(self) -> bool:
        """Busy GPUs must exactly cover the staging/running tasks' demands."""
        busy = int(np.count_nonzero(self.arr_busy))
        demand = sum(
            rec.spec.gpus_required for rec in self.tasks.values()
            if rec.status in (TaskStatus.STAGING, TaskStatus.RUNNING)
        )
        return busy == demand

    def metrics(self) -> dict:
        assert self.finished, "metrics requested before the run finished"
        records = [self.tasks[tid] for tid in sorted(self.tasks)]
        dispatched = [r.p_comm for r in records if r.p_comm is not None]
        return accounting.build_metrics(
            records, self.scenario.workload.horizon_hours, self.latency_samples_ms,
            extras={
                "gpu_failure_events": self.failure_events,
                "mean_p_comm": (sum(dispatched) / len(dispatched)) if dispatched else None,
                "utilization": self.util_timeline,
            },
        )

    def _trace(self, event: str, task: Optional[TaskRecord] = None,
               gpus: Optional[list[int]] = None, status: Optional[str] = None) -> None:
        if self.trace_hook is None:
            return
        row = {
            "time_s": self.now,
            "event": event,
            "task_id": task.task_id if task is not None else None,
            "gpu_ids": list(task.assigned_gpus) if task is not None else (gpus or None),
            "status": task.status.value if task is not None else status,
            "reward": task.reward if task is not None else None,
            "cost_usd": task.cost_usd if task is not None and task.terminal else None,
            "p_comm": task.p_comm if task is not None else None,
            "bandwidth_penalty": task.bandwidth_penalty if task is not None else None,
        }
        self.trace_hook(row)
