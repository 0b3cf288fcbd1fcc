"""Arrival-process shapes, deadline assignment, and generator determinism."""

import numpy as np
import pytest
from scipy import stats

from commgrid.types import CommProfile, Region
from commgrid.workload import (
    BURST_HOURS,
    BURST_WIDTH_H,
    CRITICAL_SLACK_RANGE,
    DEFAULT_SLACK_RANGE,
    DEFAULT_TEMPLATES,
    TEMPLATES_BY_NAME,
    WorkloadPattern,
    assign_deadline,
    generate,
)

H = 24.0


def gen(pattern_kind, n, seed=0, **kw):
    return generate(WorkloadPattern(pattern_kind), n, H, seed, **kw)


# -- the stock templates -----------------------------------------------------

def test_stock_template_catalog():
    assert [t.name for t in DEFAULT_TEMPLATES] == [
        "CriticalInference", "BertFinetune", "Llama7bFinetune", "ResNetTraining"]
    t = TEMPLATES_BY_NAME
    assert (t["CriticalInference"].base_hours, t["CriticalInference"].gpus_required) == (0.1, 1)
    assert (t["BertFinetune"].base_hours, t["BertFinetune"].gpus_required) == (6.0, 1)
    assert (t["Llama7bFinetune"].base_hours, t["Llama7bFinetune"].gpus_required) == (12.0, 16)
    assert (t["ResNetTraining"].base_hours, t["ResNetTraining"].gpus_required) == (12.0, 32)
    assert t["CriticalInference"].comm_profile is CommProfile.POINT_TO_POINT
    assert t["BertFinetune"].comm_profile is CommProfile.COMPUTE_HEAVY
    assert t["Llama7bFinetune"].comm_profile is CommProfile.ALL_REDUCE
    assert t["ResNetTraining"].comm_profile is CommProfile.RING
    assert t["CriticalInference"].critical_probability == 1.0


def test_unknown_pattern_rejected():
    with pytest.raises(ValueError):
        WorkloadPattern("weekly")


# -- deadlines ---------------------------------------------------------------

def test_deadline_arithmetic():
    # slack 2.0 on a 0.1 h task: deadline lands 720 s after arrival.
    assert assign_deadline(0.0, 0.1, 2.0) == pytest.approx(720.0)
    # slack 4.0 on a 6 h task: arrival + 24 h.
    assert assign_deadline(1000.0, 6.0, 4.0) == pytest.approx(1000.0 + 86400.0)


def test_slack_ranges_by_criticality():
    specs = gen("poisson", 4000)
    lo_c, hi_c = CRITICAL_SLACK_RANGE
    lo_n, hi_n = DEFAULT_SLACK_RANGE
    saw_critical = saw_normal = False
    for s in specs:
        slack = (s.deadline_s - s.arrival_s) / (s.base_hours * 3600.0)
        if s.critical:
            saw_critical = True
            assert lo_c <= slack < hi_c
        else:
            saw_normal = True
            assert lo_n <= slack < hi_n
        # slack floor 1.5 > 1 means the deadline is never tighter than the
        # reference runtime itself
        assert s.deadline_s > s.arrival_s + s.base_hours * 3600.0
    assert saw_critical and saw_normal


# -- arrival processes ---------------------------------------------------------

def test_uniform_exact_count_sorted_in_range():
    specs = gen("uniform", 1000)
    arrivals = [s.arrival_s for s in specs]
    assert len(arrivals) == 1000
    assert arrivals == sorted(arrivals)
    assert all(0.0 <= a < H * 3600.0 for a in arrivals)
    assert [s.task_id for s in specs] == list(range(1000))


def test_uniform_bucket_occupancy():
    # 4 six-hour buckets, n=1000: each binomial(1000, 1/4), sigma ~ 13.7.
    specs = gen("uniform", 1000, seed=3)
    counts = [0, 0, 0, 0]
    for s in specs:
        counts[int(s.arrival_s // (6 * 3600.0))] += 1
    for c in counts:
        assert abs(c - 250) <= 42  # 3 sigma, rounded up


def test_uniform_criticality_is_a_fair_coin():
    specs = gen("uniform", 4000, seed=1)
    frac = sum(s.critical for s in specs) / len(specs)
    assert 0.45 < frac < 0.55


def test_poisson_interarrivals_exponential():
    n = 2000
    specs = gen("poisson", n, seed=7)
    arrivals = np.array([s.arrival_s for s in specs])
    inter = np.diff(arrivals)
    # lambda0 = n / horizon; KS against the matching exponential.
    scale = H * 3600.0 / n
    result = stats.kstest(inter, "expon", args=(0, scale))
    assert result.pvalue > 0.01


def test_sinusoidal_peak_vs_trough():
    # lambda(t) = lambda0 (1 + 0.8 sin(2 pi t / 24h)) peaks at hour 6 and
    # bottoms at hour 18; density ratio there is 9:1.
    counts_peak = counts_trough = 0
    for seed in range(10):
        for s in gen("sinusoidal", 600, seed=seed):
            h = s.arrival_s / 3600.0
            if 4.0 <= h < 8.0:
                counts_peak += 1
            elif 16.0 <= h < 20.0:
                counts_trough += 1
    assert counts_peak > 3 * counts_trough


def test_bursty_volume_sits_in_windows():
    in_window = total = 0
    for seed in range(10):
        for s in gen("bursty", 800, seed=seed):
            h = s.arrival_s / 3600.0
            total += 1
            if any(b <= h < b + BURST_WIDTH_H for b in BURST_HOURS):
                in_window += 1
    # 3 bursts x 20% rescaled over the 0.8 burst mass plus the slice of
    # background that lands inside: expect roughly 77%.
    assert 0.70 < in_window / total < 0.85


def test_phased_rate_tracks_phase_weights():
    counts = [0, 0, 0, 0]
    for seed in range(10):
        for s in gen("phased", 1000, seed=seed):
            counts[int(s.arrival_s // (6 * 3600.0))] += 1
    total = sum(counts)
    shares = [c / total for c in counts]
    # weights 0.6 / 1.0 / 1.4 / 1.0 normalize to .15 / .25 / .35 / .25
    for share, want in zip(shares, (0.15, 0.25, 0.35, 0.25)):
        assert abs(share - want) < 0.03


def test_phased_overnight_mix_favors_batch_jobs():
    batch = {"ResNetTraining", "Llama7bFinetune"}
    overnight = [s for seed in range(10) for s in gen("phased", 800, seed=seed)
                 if s.arrival_s < 6 * 3600.0]
    frac = sum(s.template in batch for s in overnight) / len(overnight)
    assert frac > 0.7  # configured mix puts 0.8 of overnight mass on batch


@pytest.mark.parametrize("kind", ["uniform", "poisson", "sinusoidal", "bursty", "phased"])
def test_expected_count_within_two_percent(kind):
    n = 400
    counts = [len(gen(kind, n, seed=seed)) for seed in range(50)]
    assert abs(np.mean(counts) / n - 1.0) < 0.02


@pytest.mark.parametrize("kind", ["uniform", "poisson", "sinusoidal", "bursty", "phased"])
def test_generator_determinism(kind):
    assert gen(kind, 300, seed=11) == gen(kind, 300, seed=11)
    assert gen(kind, 300, seed=11) != gen(kind, 300, seed=12)


def test_arrivals_sorted_every_pattern():
    for kind in ("poisson", "sinusoidal", "bursty", "phased"):
        arrivals = [s.arrival_s for s in gen(kind, 500, seed=2)]
        assert arrivals == sorted(arrivals)
        assert all(0.0 <= a < H * 3600.0 for a in arrivals)


def test_region_weights_respected():
    only_east = gen("uniform", 200, seed=0,
                    region_weights={Region.US_EAST: 1.0},
                    regions=(Region.US_EAST, Region.EU_CENTRAL))
    assert {s.data_region for s in only_east} == {Region.US_EAST}
    spread = gen("uniform", 1200, seed=0)
    assert {s.data_region for s in spread} == set(Region)
