"""Shared builders for small, fully-controlled scenarios.

Most engine-level tests want a world with every noise source switched off
(no congestion, no bandwidth jitter, no churn) so that staging and compute
times come out as exact arithmetic. quiet_scenario() builds that world.
"""

from commgrid.config import FleetConfig, ScenarioConfig, WorkloadConfig
from commgrid.engine import Engine
from commgrid.network import NetworkConfig
from commgrid.types import CommProfile, Region
from commgrid.workload import TaskTemplate

# 120 s of compute on the reference card, no data to move, single GPU.
TINY_TEMPLATE = TaskTemplate(
    "TinySmoke", base_hours=120.0 / 3600.0, gpus_required=1, mem_per_gpu_gb=4.0,
    comm_profile=CommProfile.POINT_TO_POINT, comm_intensity=0.0,
    data_volume_gb=0.0, critical_probability=0.0,
)


def quiet_network(**overrides) -> NetworkConfig:
    kw = dict(p_cong=0.0, query_noise=0.0)
    kw.update(overrides)
    return NetworkConfig(**kw)


def quiet_scenario(template=TINY_TEMPLATE, *, n_gpus=4, model="RTX 4090",
                   regions=(Region.US_EAST,), n_tasks=1, horizon_hours=24.0,
                   pattern="uniform", scheduler="greedy", dropout=0.0,
                   network=None, seed=0, **kw) -> ScenarioConfig:
    templates = (template,) if isinstance(template, TaskTemplate) else tuple(template)
    return ScenarioConfig(
        name="test",
        fleet=FleetConfig(n_gpus=n_gpus, model_mix={model: 1.0},
                          regions=tuple(regions), base_dropout_per_hour=dropout),
        workload=WorkloadConfig(pattern=pattern, n_tasks=n_tasks,
                                horizon_hours=horizon_hours, templates=templates),
        network=network if network is not None else quiet_network(),
        scheduler=scheduler,
        seed=seed,
        **kw,
    )


def manual_engine(cfg: ScenarioConfig, seed=None) -> Engine:
    """Engine with no scheduler attached: tasks queue up until the test
    dispatches them by hand."""
    eng = Engine(cfg, seed=seed)
    eng.strategy = None
    return eng
