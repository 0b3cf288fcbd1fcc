"""Region-graph network model.

Latency comes from a static great-circle table built at init. Bandwidth on
inter-region links moves with the time of day (four diurnal phases), drops
when a stochastic congestion event is active on the link, and carries a small
multiplicative query noise. The communication slowdown of a GPU assignment is
derived from the worst critical link of the task's traffic pattern.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .types import (
    REFERENCE_BANDWIDTH_GBPS,
    REGION_COORDS,
    CommProfile,
    Region,
)

EARTH_RADIUS_KM = 6371.0
INTRA_REGION_LATENCY_MS = 2.0

# Hard bounds of the communication slowdown factor.
P_COMM_MIN = 1.0
P_COMM_MAX = 5.0


def great_circle_km(a: tuple[float, float], b: tuple[float, float]) -> float:
    """Haversine distance between two (lat, lon) points in degrees."""
    lat1, lon1 = math.radians(a[0]), math.radians(a[1])
    lat2, lon2 = math.radians(b[0]), math.radians(b[1])
    dlat = lat2 - lat1
    dlon = lon2 - lon1
    h = math.sin(dlat / 2.0) ** 2 + math.cos(lat1) * math.cos(lat2) * math.sin(dlon / 2.0) ** 2
    return 2.0 * EARTH_RADIUS_KM * math.asin(min(1.0, math.sqrt(h)))


@dataclass(frozen=True)
class DiurnalPhase:
    """One six-hour slice of the repeating daily cycle."""

    name: str
    window: tuple[int, int]            # [start_hour, end_hour)
    bandwidth_multiplier: float
    arrival_rate_weight: float
    task_mix: dict[str, float]         # template name -> probability


# The daily cycle. Windows partition [0, 24). Mixes shift long batch jobs
# into the night and latency-sensitive inference into business hours.
DEFAULT_PHASES: tuple[DiurnalPhase, ...] = (
    DiurnalPhase(
        "OvernightBatch", (0, 6), 1.2, 0.6,
        {"ResNetTraining": 0.45, "Llama7bFinetune": 0.35, "BertFinetune": 0.15, "CriticalInference": 0.05},
    ),
    DiurnalPhase(
        "MorningSession", (6, 12), 1.0, 1.0,
        {"CriticalInference": 0.35, "BertFinetune": 0.35, "Llama7bFinetune": 0.20, "ResNetTraining": 0.10},
    ),
    DiurnalPhase(
        "AfternoonPeak", (12, 18), 0.6, 1.4,
        {"CriticalInference": 0.50, "BertFinetune": 0.30, "Llama7bFinetune": 0.15, "ResNetTraining": 0.05},
    ),
    DiurnalPhase(
        "Evening", (18, 24), 0.8, 1.0,
        {"CriticalInference": 0.25, "BertFinetune": 0.35, "Llama7bFinetune": 0.25, "ResNetTraining": 0.15},
    ),
)


def phase_at(hour_of_day: float, phases: Sequence[DiurnalPhase] = DEFAULT_PHASES) -> DiurnalPhase:
    h = hour_of_day % 24.0
    for phase in phases:
        lo, hi = phase.window
        if lo <= h < hi:
            return phase
    raise ValueError(f"phase table does not cover hour {h}")


@dataclass
class NetworkConfig:
    inter_bandwidth_gbps: float = 1.0
    intra_bandwidth_gbps: float = 10.0
    p_cong: float = 0.02               # per link-hour congestion probability
    congestion_multiplier: float = 1.0
    congestion_factor_range: tuple[float, float] = (0.1, 0.5)
    congestion_mean_duration_s: float = 1800.0
    query_noise: float = 0.05          # bandwidth queries jitter by ±this fraction
    phases: tuple[DiurnalPhase, ...] = DEFAULT_PHASES
    # Optional per-link base bandwidth overrides, keyed by region pair.
    link_overrides: dict[tuple[Region, Region], float] = field(default_factory=dict)


def _link_key(a: Region, b: Region) -> tuple[Region, Region]:
    return (a, b) if a <= b else (b, a)


@dataclass
class LinkState:
    base_latency_ms: float
    base_bandwidth_gbps: float
    congestion_factor: float = 1.0
    congestion_until: Optional[float] = None


@dataclass(frozen=True)
class CongestionDraw:
    """One congestion event produced by the hourly injection sweep."""

    link: tuple[Region, Region]
    factor: float
    start_s: float
    end_s: float


class NetworkModel:
    """All link state for one simulation run.

    The constructor consumes the network RNG stream to build the latency
    table (one jitter draw per unordered inter-region pair, in sorted pair
    order), so two models built from equally-seeded streams are identical.
    """

    def __init__(self, config: NetworkConfig, rng: np.random.Generator,
                 regions: Sequence[Region] = tuple(Region)):
        self.config = config
        self.rng = rng
        self.regions = tuple(regions)
        self.links: dict[tuple[Region, Region], LinkState] = {}
        for a, b in self.inter_region_pairs():
            km = great_circle_km(REGION_COORDS[a], REGION_COORDS[b])
            jitter = rng.uniform(0.0, 10.0)
            base_bw = config.link_overrides.get((a, b), config.inter_bandwidth_gbps)
            self.links[(a, b)] = LinkState(
                base_latency_ms=km / 100.0 + jitter,
                base_bandwidth_gbps=base_bw,
            )

    def inter_region_pairs(self) -> list[tuple[Region, Region]]:
        out = []
        for i, a in enumerate(self.regions):
            for b in self.regions[i + 1:]:
                out.append(_link_key(a, b))
        return sorted(out)

    # -- latency ---------------------------------------------------------

    def latency_ms(self, a: Region, b: Region) -> float:
        if a == b:
            return INTRA_REGION_LATENCY_MS
        return self.links[_link_key(a, b)].base_latency_ms

    # -- bandwidth -------------------------------------------------------

    def _phase_multiplier(self, t_s: float) -> float:
        return phase_at(t_s / 3600.0, self.config.phases).bandwidth_multiplier

    def phase_name(self, t_s: float) -> str:
        return phase_at(t_s / 3600.0, self.config.phases).name

    def expected_bandwidth(self, a: Region, b: Region, t_s: float) -> float:
        """Bandwidth without query noise. Deterministic in (link, t)."""
        if a == b:
            return self.config.intra_bandwidth_gbps
        link = self.links[_link_key(a, b)]
        factor = link.congestion_factor if self._congestion_active(link, t_s) else 1.0
        return link.base_bandwidth_gbps * self._phase_multiplier(t_s) * factor

    def effective_bandwidth(self, a: Region, b: Region, t_s: float) -> float:
        """Bandwidth as a transfer would actually see it, noise included."""
        noise = 1.0
        if self.config.query_noise > 0.0:
            band = self.config.query_noise
            noise = self.rng.uniform(1.0 - band, 1.0 + band)
        return self.expected_bandwidth(a, b, t_s) * noise

    @staticmethod
    def _congestion_active(link: LinkState, t_s: float) -> bool:
        return link.congestion_until is not None and t_s < link.congestion_until

    # -- congestion lifecycle ---------------------------------------------

    def draw_congestion(self, t_s: float) -> list[CongestionDraw]:
        """Hourly injection sweep over every inter-region link.

        Each link independently starts a congestion event with probability
        p_cong x congestion_multiplier. Draw order is the sorted pair order
        so the RNG stream is consumed identically across runs.
        """
        p = self.config.p_cong * self.config.congestion_multiplier
        if p <= 0.0:
            return []
        draws = []
        lo, hi = self.config.congestion_factor_range
        for pair in self.inter_region_pairs():
            if self.rng.random() < p:
                factor = self.rng.uniform(lo, hi)
                duration = self.rng.exponential(self.config.congestion_mean_duration_s)
                draws.append(CongestionDraw(pair, factor, t_s, t_s + duration))
        return draws

    def begin_congestion(self, draw: CongestionDraw) -> None:
        """Overlapping events keep the worst factor and the latest end."""
        link = self.links[draw.link]
        if self._congestion_active(link, draw.start_s):
            link.congestion_factor = min(link.congestion_factor, draw.factor)
            link.congestion_until = max(link.congestion_until, draw.end_s)
        else:
            link.congestion_factor = draw.factor
            link.congestion_until = draw.end_s

    def end_congestion(self, pair: tuple[Region, Region], t_s: float) -> bool:
        """Clear congestion if no later overlapping event extended it.
        Returns True when the link actually recovered."""
        link = self.links[pair]
        if link.congestion_until is not None and link.congestion_until <= t_s:
            link.congestion_factor = 1.0
            link.congestion_until = None
            return True
        return False

    def congested_fraction(self, t_s: float) -> float:
        n = len(self.links)
        if n == 0:
            return 0.0
        hot = sum(1 for link in self.links.values() if self._congestion_active(link, t_s))
        return hot / n

    # -- communication penalty --------------------------------------------

    def critical_links(self, profile: CommProfile, data_region: Region,
                       gpus: Sequence[tuple[int, Region]]) -> list[tuple[Region, Region]]:
        """The links whose worst bandwidth bounds the task's communication.

        PointToPoint and ComputeHeavy traffic flows between the data's home
        region and each GPU. Ring traffic flows between id-adjacent GPUs
        (wrap-around pair included). AllReduce stresses every GPU pair.
        """
        if profile in (CommProfile.POINT_TO_POINT, CommProfile.COMPUTE_HEAVY):
            return [_link_key(data_region, region) for _, region in sorted(gpus)]
        ordered = [region for _, region in sorted(gpus)]
        pairs: list[tuple[Region, Region]] = []
        seen = set()
        if profile is CommProfile.RING:
            n = len(ordered)
            for i in range(n if n > 1 else 0):
                key = _link_key(ordered[i], ordered[(i + 1) % n])
                if key not in seen:
                    seen.add(key)
                    pairs.append(key)
            return pairs
        if profile is CommProfile.ALL_REDUCE:
            for i in range(len(ordered)):
                for j in range(i + 1, len(ordered)):
                    key = _link_key(ordered[i], ordered[j])
                    if key not in seen:
                        seen.add(key)
                        pairs.append(key)
            return pairs
        raise ValueError(f"unknown comm profile {profile!r}")

    def comm_penalty(self, profile: CommProfile, comm_intensity: float,
                     data_region: Region, gpus: Sequence[tuple[int, Region]],
                     t_s: float, noisy: bool = True) -> tuple[float, float]:
        """Slowdown factor of an assignment and the bandwidth that caused it.

        Returns (p_comm, b_eff_gbps). b_eff is the minimum bandwidth over the
        pattern's critical links; p_comm scales the shortfall against the
        10 Gbps reference by the task's communication intensity and is
        clamped to [1, 5].
        """
        assert gpus, "comm penalty needs at least one GPU"
        if (
            len(gpus) == 1
            and profile in (CommProfile.POINT_TO_POINT, CommProfile.COMPUTE_HEAVY)
            and gpus[0][1] == data_region
        ):
            return P_COMM_MIN, self.config.intra_bandwidth_gbps

        links = self.critical_links(profile, data_region, gpus)
        if not links:
            return P_COMM_MIN, self.config.intra_bandwidth_gbps

        query = self.effective_bandwidth if noisy else self.expected_bandwidth
        b_eff = min(query(a, b, t_s) for a, b in links)
        if b_eff <= 0.0:
            return P_COMM_MAX, b_eff
        raw = 1.0 + comm_intensity * (REFERENCE_BANDWIDTH_GBPS / b_eff - 1.0)
        return min(P_COMM_MAX, max(P_COMM_MIN, raw)), b_eff


def bandwidth_penalty(b_eff_gbps: float) -> float:
    """Fraction of reference bandwidth the assignment is missing, floored at 0."""
    return max(0.0, 1.0 - b_eff_gbps / REFERENCE_BANDWIDTH_GBPS)
