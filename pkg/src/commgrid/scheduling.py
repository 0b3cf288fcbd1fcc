"""Candidate filtering, baseline placement strategies, and queue ordering.

The engine asks a strategy for a concrete GPU list each time a pending task
has enough candidates. Strategies are deliberately small: greedy (fastest
cards first), random, and round-robin over the global id space. The external
agent slot lives in the server module since it needs the wire protocol.
"""

from __future__ import annotations

import heapq
from typing import Optional, Protocol, Sequence

import numpy as np

from .types import REFERENCE_TFLOPS, GpuNode, MAX_CATALOG_TFLOPS, TaskSpec


class DispatchRejected(Exception):
    """Raised when dispatch preconditions fail; names the offending GPU."""

    def __init__(self, reason: str, gpu_id: Optional[int] = None):
        self.reason = reason
        self.gpu_id = gpu_id
        detail = f"gpu {gpu_id}: {reason}" if gpu_id is not None else reason
        super().__init__(detail)


def min_possible_hours(base_hours: float) -> float:
    """Fastest conceivable runtime: best catalog card, no slowdown.

    Used by the queue to expire tasks that cannot finish by their deadline
    even under ideal placement.
    """
    return base_hours * REFERENCE_TFLOPS / MAX_CATALOG_TFLOPS


def filter_candidates(task: TaskSpec, nodes: Sequence[GpuNode]) -> list[int]:
    """All online, idle, memory-sufficient GPUs in ascending id order."""
    return [
        n.gpu_id for n in nodes
        if n.online and n.busy_task is None and n.model.memory_gb >= task.mem_per_gpu_gb
    ]


def greedy_select(cands: Sequence[int], k: int, nodes: Sequence[GpuNode]) -> list[int]:
    """Top-k candidates by TFLOPS; ties prefer cheaper, then lower id."""
    assert len(cands) >= k, "greedy_select needs at least k candidates"
    def key(gid: int):
        node = nodes[gid]
        return (-node.model.tflops, node.model.hourly_cost_usd, gid)
    return heapq.nsmallest(k, cands, key=key)


def random_select(cands: Sequence[int], k: int, rng: np.random.Generator) -> list[int]:
    """Uniform sample of k distinct candidates."""
    assert len(cands) >= k, "random_select needs at least k candidates"
    idx = rng.choice(len(cands), size=k, replace=False)
    return [cands[int(i)] for i in idx]


def roundrobin_select(cands: Sequence[int], k: int, pointer: int,
                      n_gpus: int) -> tuple[list[int], int]:
    """Walk the global id space from the pointer, keep the first k candidates.

    Returns the selection and the advanced pointer (one past the last taken).
    The pointer persists across tasks, so repeated single-GPU placements on a
    homogeneous fleet rotate evenly.
    """
    assert len(cands) >= k, "roundrobin_select needs at least k candidates"
    in_cands = set(cands)
    taken: list[int] = []
    for offset in range(n_gpus):
        gid = (pointer + offset) % n_gpus
        if gid in in_cands:
            taken.append(gid)
            if len(taken) == k:
                return taken, (gid + 1) % n_gpus
    raise AssertionError("unreachable: candidate set smaller than k")


class Strategy(Protocol):
    name: str

    def select(self, task: TaskSpec, cands: list[int], engine) -> Optional[list[int]]:
        """Pick exactly task.gpus_required ids from cands, or None to skip."""
        ...


class GreedyStrategy:
    name = "greedy"

    def __init__(self, nodes: Sequence[GpuNode]):
        # The greedy order never changes, so rank every GPU once.
        order = sorted(
            range(len(nodes)),
            key=lambda gid: (-nodes[gid].model.tflops, nodes[gid].model.hourly_cost_usd, gid),
        )
        self._rank = [0] * len(nodes)
        for rank, gid in enumerate(order):
            self._rank[gid] = rank

    def select(self, task: TaskSpec, cands: list[int], engine) -> list[int]:
        return heapq.nsmallest(task.gpus_required, cands, key=self._rank.__getitem__)


class RandomStrategy:
    name = "random"

    def __init__(self, rng: np.random.Generator):
        self.rng = rng

    def select(self, task: TaskSpec, cands: list[int], engine) -> list[int]:
        return random_select(cands, task.gpus_required, self.rng)


class RoundRobinStrategy:
    name = "roundrobin"

    def __init__(self, n_gpus: int):
        self.n_gpus = n_gpus
        self.pointer = 0

    def select(self, task: TaskSpec, cands: list[int], engine) -> list[int]:
        taken, self.pointer = roundrobin_select(cands, task.gpus_required, self.pointer, self.n_gpus)
        return taken


def make_baseline(name: str, nodes: Sequence[GpuNode],
                  scheduling_rng: np.random.Generator) -> Strategy:
    if name == "greedy":
        return GreedyStrategy(nodes)
    if name == "random":
        return RandomStrategy(scheduling_rng)
    if name == "roundrobin":
        return RoundRobinStrategy(len(nodes))
    raise ValueError(f"unknown baseline strategy {name!r}")
