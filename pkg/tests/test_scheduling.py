"""Baseline selection rules: candidate filtering, greedy, random, round-robin."""

import numpy as np
import pytest

from commgrid.scheduling import (
    GreedyStrategy,
    RandomStrategy,
    RoundRobinStrategy,
    filter_candidates,
    greedy_select,
    make_baseline,
    min_possible_hours,
    random_select,
    roundrobin_select,
)
from commgrid.types import (
    GPU_MODELS_BY_NAME,
    CommProfile,
    GpuModel,
    GpuNode,
    Region,
    TaskSpec,
)

H100 = GPU_MODELS_BY_NAME["H100"]
RTX4090 = GPU_MODELS_BY_NAME["RTX 4090"]
RTX3060 = GPU_MODELS_BY_NAME["RTX 3060"]


def node(gpu_id, model=RTX4090, region=Region.US_EAST, online=True, busy=None):
    n = GpuNode(gpu_id=gpu_id, model=model, region=region, dropout_per_hour=0.01)
    n.online = online
    n.busy_task = busy
    return n


def spec(gpus_required=1, mem=10.0):
    return TaskSpec(task_id=0, template="T", gpus_required=gpus_required,
                    mem_per_gpu_gb=mem, base_hours=1.0, arrival_s=0.0,
                    deadline_s=7200.0, critical=False,
                    comm_profile=CommProfile.POINT_TO_POINT, comm_intensity=0.0,
                    data_region=Region.US_EAST, data_volume_gb=0.0)


# -- filtering ----------------------------------------------------------------

def test_filter_excludes_offline_busy_and_small_memory():
    nodes = [
        node(0, H100),
        node(1, RTX3060),              # 12 GB, too small for a 20 GB ask
        node(2, RTX4090, online=False),
        node(3, RTX4090, busy=7),
        node(4, RTX4090),
    ]
    assert filter_candidates(spec(mem=20.0), nodes) == [0, 4]


def test_filter_zero_memory_admits_all_idle_online():
    nodes = [node(0, RTX3060), node(1, H100), node(2, RTX4090, online=False)]
    assert filter_candidates(spec(mem=0.0), nodes) == [0, 1]


def test_filter_all_busy_is_empty():
    nodes = [node(i, busy=i) for i in range(4)]
    assert filter_candidates(spec(), nodes) == []


def test_min_possible_hours_uses_fastest_card():
    assert min_possible_hours(6.0) == pytest.approx(6.0 * 82.6 / 989.0)


# -- greedy ---------------------------------------------------------------

def test_greedy_prefers_throughput():
    nodes = [node(0, RTX3060), node(1, H100), node(2, RTX4090)]
    assert greedy_select([0, 1, 2], 1, nodes) == [1]
    assert greedy_select([0, 1, 2], 2, nodes) == [1, 2]


def test_greedy_tie_breaks_on_lower_id():
    nodes = [node(0, RTX4090), node(1, RTX4090), node(2, RTX4090)]
    assert greedy_select([1, 2, 0], 1, nodes) == [0]


def test_greedy_tie_breaks_on_cost_before_id():
    # Same throughput, different hourly price: the cheap card wins.
    pricey = GpuModel("Custom-A", memory_gb=24.0, tflops=50.0,
                      hourly_cost_usd=0.9, reference_quantity=1)
    cheap = GpuModel("Custom-B", memory_gb=24.0, tflops=50.0,
                     hourly_cost_usd=0.2, reference_quantity=1)
    nodes = [node(0, pricey), node(1, cheap)]
    assert greedy_select([0, 1], 1, nodes) == [1]


def test_greedy_whole_set_when_k_equals_cands():
    nodes = [node(i) for i in range(5)]
    assert sorted(greedy_select([0, 1, 2, 3, 4], 5, nodes)) == [0, 1, 2, 3, 4]


# -- random ---------------------------------------------------------------

def test_random_is_seed_reproducible():
    cands = list(range(20))
    a = random_select(cands, 4, np.random.default_rng(42))
    b = random_select(cands, 4, np.random.default_rng(42))
    assert a == b
    assert len(set(a)) == 4 and set(a) <= set(cands)


def test_random_whole_set_when_k_equals_cands():
    got = random_select([3, 5, 8], 3, np.random.default_rng(0))
    assert sorted(got) == [3, 5, 8]


def test_random_is_roughly_uniform():
    rng = np.random.default_rng(9)
    counts = {c: 0 for c in range(4)}
    n = 10_000
    for _ in range(n):
        counts[random_select([0, 1, 2, 3], 1, rng)[0]] += 1
    # binomial(10^4, 1/4): sigma ~ 43, allow 3 sigma
    for c in counts.values():
        assert abs(c - 2500) <= 130


# -- round robin --------------------------------------------------------------

def test_roundrobin_walks_and_wraps():
    taken, ptr = roundrobin_select([0, 1, 2, 3], 2, pointer=3, n_gpus=4)
    assert taken == [3, 0]
    assert ptr == 1  # one past the last taken id


def test_roundrobin_skips_missing_candidates_without_consuming_turns():
    # Pointer at 1, but GPU 1 is not in the candidate set: the walk passes
    # over it and the pointer ends one past the GPU actually taken.
    taken, ptr = roundrobin_select([0, 2, 3], 1, pointer=1, n_gpus=4)
    assert taken == [2]
    assert ptr == 3


def test_roundrobin_strategy_keeps_pointer_across_calls():
    nodes = [node(i) for i in range(4)]
    strat = RoundRobinStrategy(n_gpus=4)
    order = [strat.select(spec(), [0, 1, 2, 3], None)[0] for _ in range(8)]
    assert order == [0, 1, 2, 3, 0, 1, 2, 3]


def test_roundrobin_balances_assignments():
    strat = RoundRobinStrategy(n_gpus=4)
    counts = {i: 0 for i in range(4)}
    for _ in range(103):
        counts[strat.select(spec(), [0, 1, 2, 3], None)[0]] += 1
    assert max(counts.values()) - min(counts.values()) <= 1


# -- wiring ---------------------------------------------------------------

def test_make_baseline_names_and_types():
    nodes = [node(i) for i in range(3)]
    rng = np.random.default_rng(0)
    assert isinstance(make_baseline("greedy", nodes, rng), GreedyStrategy)
    assert isinstance(make_baseline("random", nodes, rng), RandomStrategy)
    assert isinstance(make_baseline("roundrobin", nodes, rng), RoundRobinStrategy)
    with pytest.raises(ValueError):
        make_baseline("lottery", nodes, rng)


def test_strategy_contract_randomized():
    # Any baseline, any candidate set: k distinct ids, all from the set.
    rng = np.random.default_rng(123)
    nodes = [node(i, model=[H100, RTX4090, RTX3060][i % 3]) for i in range(32)]
    strategies = [GreedyStrategy(nodes), RandomStrategy(np.random.default_rng(1)),
                  RoundRobinStrategy(32)]
    for _ in range(500):
        size = int(rng.integers(1, 33))
        cands = sorted(rng.choice(32, size=size, replace=False).tolist())
        k = int(rng.integers(1, size + 1))
        for strat in strategies:
            chosen = strat.select(spec(gpus_required=k), cands, None)
            assert len(chosen) == k
            assert len(set(chosen)) == k
            assert set(chosen) <= set(cands)
