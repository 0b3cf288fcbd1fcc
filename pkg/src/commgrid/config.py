"""Scenario configuration, presets, and the flat dotted-key config format.

A scenario is fleet + workload + network + reward weights + scheduler + seed.
Config files are plain text, one `section.key=value` per line; the same keys
work as `--set` overrides on the command line. Presets give the experiment
setups used throughout: a 64-GPU small scale, a 1000-GPU large scale, churn
and congestion stress grids, and a two-region locality scenario.
"""

from __future__ import annotations

import copy
import os
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

from .accounting import RewardWeights
from .network import NetworkConfig
from .types import GPU_CATALOG, GPU_MODELS_BY_NAME, Region
from .workload import DEFAULT_TEMPLATES, PATTERN_KINDS, TaskTemplate, CommProfile

SCHEDULER_NAMES = ("greedy", "random", "roundrobin", "agent")

# Environment variable that, when set, overrides the configured seed.
SEED_ENV_VAR = "REACH_SEED"


class ConfigError(ValueError):
    pass


def _default_model_mix() -> dict[str, float]:
    return {m.name: float(m.reference_quantity) for m in GPU_CATALOG}


@dataclass
class FleetConfig:
    n_gpus: int = 64
    model_mix: dict[str, float] = field(default_factory=_default_model_mix)
    region_mix: Optional[dict[str, float]] = None     # None = uniform over regions
    regions: tuple[Region, ...] = tuple(Region)
    base_dropout_per_hour: float = 0.01
    dropout_multiplier: float = 1.0


@dataclass
class WorkloadConfig:
    pattern: str = "phased"
    n_tasks: int = 500
    horizon_hours: float = 24.0
    templates: tuple[TaskTemplate, ...] = DEFAULT_TEMPLATES
    data_region_mix: Optional[dict[str, float]] = None


@dataclass
class ScenarioConfig:
    name: str = "custom"
    fleet: FleetConfig = field(default_factory=FleetConfig)
    workload: WorkloadConfig = field(default_factory=WorkloadConfig)
    network: NetworkConfig = field(default_factory=NetworkConfig)
    weights: RewardWeights = field(default_factory=RewardWeights)
    scheduler: str = "greedy"
    seed: int = 0
    scheduling_tick_s: float = 60.0
    metrics_tick_s: float = 3600.0
    decision_timeout_s: float = 5.0
    egress_rates: Optional[dict[Region, float]] = None

    def validate(self) -> None:
        if self.fleet.n_gpus <= 0:
            raise ConfigError("fleet.n_gpus must be positive")
        if not self.fleet.model_mix or sum(self.fleet.model_mix.values()) <= 0:
            raise ConfigError("fleet.model_mix must have positive total weight")
        for name in self.fleet.model_mix:
            if name not in GPU_MODELS_BY_NAME:
                raise ConfigError(f"unknown GPU model {name!r}")
        if not self.fleet.regions:
            raise ConfigError("fleet.regions must be non-empty")
        if self.fleet.region_mix is not None:
            labels = {r.label for r in self.fleet.regions}
            for label in self.fleet.region_mix:
                if label not in labels:
                    raise ConfigError(f"region {label!r} not in fleet.regions")
            if sum(self.fleet.region_mix.values()) <= 0:
                raise ConfigError("fleet.region_mix must have positive total weight")
        if self.fleet.base_dropout_per_hour < 0 or self.fleet.dropout_multiplier < 0:
            raise ConfigError("dropout rates must be non-negative")
        if self.workload.n_tasks <= 0:
            raise ConfigError("workload.n_tasks must be positive")
        if self.workload.horizon_hours < 24.0:
            raise ConfigError("workload.horizon_hours must be at least 24")
        if self.workload.pattern not in PATTERN_KINDS:
            raise ConfigError(f"unknown workload.pattern {self.workload.pattern!r}")
        if not self.workload.templates:
            raise ConfigError("workload.templates must be non-empty")
        if self.scheduler not in SCHEDULER_NAMES:
            raise ConfigError(f"unknown scheduler {self.scheduler!r}")
        if self.network.p_cong < 0 or self.network.congestion_multiplier < 0:
            raise ConfigError("congestion parameters must be non-negative")
        if self.network.inter_bandwidth_gbps <= 0 or self.network.intra_bandwidth_gbps <= 0:
            raise ConfigError("bandwidths must be positive")
        if self.scheduling_tick_s <= 0:
            raise ConfigError("scheduling_tick_s must be positive")

    def effective_seed(self) -> int:
        env = os.environ.get(SEED_ENV_VAR)
        if env is not None:
            try:
                return int(env)
            except ValueError as e:
                raise ConfigError(f"{SEED_ENV_VAR} must be an integer, got {env!r}") from e
        return self.seed


# ---------------------------------------------------------------------------
# Presets

# Small-scale task-load sweep points.
SMALL_TASK_LOADS = (100, 200, 400, 700, 1000)
DROPOUT_MULTIPLIERS = (1, 2, 4, 8, 16)
CONGESTION_MULTIPLIERS = (1, 2, 4, 8)

LOCALITY_REGIONS = (Region.US_EAST, Region.EU_CENTRAL)

LOCALITY_TEMPLATE = TaskTemplate(
    "LocalBatch", base_hours=0.5, gpus_required=1, mem_per_gpu_gb=6.0,
    comm_profile=CommProfile.POINT_TO_POINT, comm_intensity=1.0,
    data_volume_gb=20.0, critical_probability=0.2,
)


def _small() -> ScenarioConfig:
    return ScenarioConfig(
        name="small",
        fleet=FleetConfig(n_gpus=64),
        workload=WorkloadConfig(pattern="phased", n_tasks=500, horizon_hours=24.0),
    )


def _large() -> ScenarioConfig:
    return ScenarioConfig(
        name="large",
        fleet=FleetConfig(n_gpus=1000),
        workload=WorkloadConfig(pattern="phased", n_tasks=5000, horizon_hours=48.0),
    )


def _stress_dropout() -> ScenarioConfig:
    cfg = _small()
    cfg.name = "stress-dropout"
    return cfg


def _stress_congestion() -> ScenarioConfig:
    cfg = _small()
    cfg.name = "stress-congestion"
    return cfg


def _locality() -> ScenarioConfig:
    """Two regions, one slow expensive link, location-sensitive tasks.

    Placement locality dominates both throughput and reward here: a local
    GPU finishes a task in ~0.5 h while a cross-region one takes ~2.6 h and
    pays heavy egress, so schedulers that ignore data location drown.
    """
    return ScenarioConfig(
        name="locality",
        fleet=FleetConfig(
            n_gpus=24,
            model_mix={"RTX 4090": 1.0},
            regions=LOCALITY_REGIONS,
            base_dropout_per_hour=0.0,
        ),
        workload=WorkloadConfig(
            pattern="poisson", n_tasks=576, horizon_hours=24.0,
            templates=(LOCALITY_TEMPLATE,),
        ),
        network=NetworkConfig(inter_bandwidth_gbps=0.5, p_cong=0.0),
        egress_rates={r: 0.1 for r in Region},
    )


_PRESET_BUILDERS = {
    "small": _small,
    "large": _large,
    "stress-dropout": _stress_dropout,
    "stress-congestion": _stress_congestion,
    "locality": _locality,
}

PRESET_NAMES = tuple(_PRESET_BUILDERS)

# Sweep axes per preset: dotted key -> values. The sweep command crosses
# these with schedulers and seeds.
PRESET_SWEEP_AXES: dict[str, dict[str, tuple]] = {
    "small": {"workload.n_tasks": SMALL_TASK_LOADS},
    "large": {},
    "stress-dropout": {"fleet.dropout_multiplier": DROPOUT_MULTIPLIERS},
    "stress-congestion": {"network.congestion_multiplier": CONGESTION_MULTIPLIERS},
    "locality": {},
    "workload-patterns": {"workload.pattern": PATTERN_KINDS},
}


def preset(name: str) -> ScenarioConfig:
    if name == "workload-patterns":
        cfg = _small()
        cfg.name = "workload-patterns"
        return cfg
    if name not in _PRESET_BUILDERS:
        raise ConfigError(f"unknown preset {name!r}; have {', '.join(PRESET_NAMES)}")
    return _PRESET_BUILDERS[name]()


# ---------------------------------------------------------------------------
# Flat-key parsing

def _parse_scalar(text: str):
    t = text.strip()
    low = t.lower()
    if low in ("true", "false"):
        return low == "true"
    try:
        return int(t)
    except ValueError:
        pass
    try:
        return float(t)
    except ValueError:
        pass
    return t


def _parse_mix(text: str) -> dict[str, float]:
    """Parse "name:weight;name:weight" into a dict."""
    out: dict[str, float] = {}
    for part in text.split(";"):
        part = part.strip()
        if not part:
            continue
        if ":" not in part:
            raise ConfigError(f"mix entry {part!r} must be name:weight")
        name, w = part.rsplit(":", 1)
        out[name.strip()] = float(w)
    return out


def _region_by_label(label: str) -> Region:
    for r in Region:
        if r.label == label:
            return r
    raise ConfigError(f"unknown region {label!r}")


_COMM_PROFILES = {
    "PointToPoint": CommProfile.POINT_TO_POINT,
    "ComputeHeavy": CommProfile.COMPUTE_HEAVY,
    "AllReduce": CommProfile.ALL_REDUCE,
    "Ring": CommProfile.RING,
}


def _apply_template_key(cfg: ScenarioConfig, parts: list[str], value: str) -> None:
    """Handle template.<Name>.<field>=... keys, creating templates on demand."""
    if len(parts) != 3:
        raise ConfigError(f"template keys look like template.<Name>.<field>, got {'.'.join(parts)}")
    _, tname, fname = parts
    existing = {t.name: t for t in cfg.workload.templates}
    base = existing.get(tname) or TaskTemplate(
        tname, base_hours=1.0, gpus_required=1, mem_per_gpu_gb=1.0,
        comm_profile=CommProfile.COMPUTE_HEAVY, comm_intensity=0.0,
        data_volume_gb=0.0, critical_probability=0.0,
    )
    if fname == "comm_profile":
        if value not in _COMM_PROFILES:
            raise ConfigError(f"unknown comm profile {value!r}")
        updated = replace(base, comm_profile=_COMM_PROFILES[value])
    elif fname == "slack_range":
        lo, hi = (float(x) for x in value.split(","))
        updated = replace(base, slack_range=(lo, hi))
    elif fname in ("base_hours", "mem_per_gpu_gb", "comm_intensity",
                   "data_volume_gb", "critical_probability"):
        updated = replace(base, **{fname: float(value)})
    elif fname == "gpus_required":
        updated = replace(base, gpus_required=int(value))
    else:
        raise ConfigError(f"unknown template field {fname!r}")
    existing[tname] = updated
    cfg.workload.templates = tuple(existing.values())


def apply_setting(cfg: ScenarioConfig, key: str, value: str) -> None:
    """Apply one dotted-key setting to the config in place."""
    key = key.strip()
    parts = key.split(".")
    if parts[0] == "template":
        _apply_template_key(cfg, parts, value)
        return

    if key == "fleet.model_mix":
        cfg.fleet.model_mix = _parse_mix(value)
        return
    if key == "fleet.region_mix":
        cfg.fleet.region_mix = _parse_mix(value)
        return
    if key == "fleet.regions":
        cfg.fleet.regions = tuple(_region_by_label(x.strip()) for x in value.split(";") if x.strip())
        return
    if key == "workload.data_region_mix":
        cfg.workload.data_region_mix = _parse_mix(value)
        return
    if key == "workload.templates":
        by_name = {t.name: t for t in DEFAULT_TEMPLATES}
        chosen = []
        for name in value.split(";"):
            name = name.strip()
            if not name:
                continue
            if name not in by_name:
                raise ConfigError(f"unknown template {name!r}")
            chosen.append(by_name[name])
        cfg.workload.templates = tuple(chosen)
        return
    if key == "egress_usd_per_gb":
        cfg.egress_rates = {_region_by_label(k): v for k, v in _parse_mix(value).items()}
        return

    scalar = _parse_scalar(value)
    simple = {
        "name": ("name",),
        "scheduler": ("scheduler",),
        "seed": ("seed",),
        "scheduling_tick_s": ("scheduling_tick_s",),
        "metrics_tick_s": ("metrics_tick_s",),
        "decision_timeout_s": ("decision_timeout_s",),
        "fleet.n_gpus": ("fleet", "n_gpus"),
        "fleet.base_dropout_per_hour": ("fleet", "base_dropout_per_hour"),
        "fleet.dropout_multiplier": ("fleet", "dropout_multiplier"),
        "workload.pattern": ("workload", "pattern"),
        "workload.n_tasks": ("workload", "n_tasks"),
        "workload.horizon_hours": ("workload", "horizon_hours"),
        "network.inter_bandwidth_gbps": ("network", "inter_bandwidth_gbps"),
        "network.intra_bandwidth_gbps": ("network", "intra_bandwidth_gbps"),
        "network.p_cong": ("network", "p_cong"),
        "network.congestion_multiplier": ("network", "congestion_multiplier"),
        "network.query_noise": ("network", "query_noise"),
        "weights.w_comp": ("weights", "w_comp"),
        "weights.w_deadline": ("weights", "w_deadline"),
        "weights.w_fail": ("weights", "w_fail"),
        "weights.w_cost": ("weights", "w_cost"),
        "weights.w_comm": ("weights", "w_comm"),
    }
    if key not in simple:
        raise ConfigError(f"unknown config key {key!r}")
    path = simple[key]
    if path[0] == "weights":
        # RewardWeights is frozen; rebuild it.
        cfg.weights = replace(cfg.weights, **{path[1]: float(scalar)})
        return
    target = cfg
    for attr in path[:-1]:
        target = getattr(target, attr)
    current = getattr(target, path[-1])
    if isinstance(current, bool):
        scalar = bool(scalar)
    elif isinstance(current, int) and not isinstance(scalar, bool):
        scalar = int(scalar)
    elif isinstance(current, float):
        scalar = float(scalar)
    setattr(target, path[-1], scalar)


def load_config_file(path: str, base: Optional[ScenarioConfig] = None) -> ScenarioConfig:
    cfg = copy.deepcopy(base) if base is not None else ScenarioConfig()
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, value = line.split("=", 1)
            apply_setting(cfg, key, value)
    return cfg
