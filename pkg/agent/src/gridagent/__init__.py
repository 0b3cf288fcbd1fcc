"""Transformer scheduling policy trained with PPO over the environment's
newline-JSON protocol."""

from .client import ConnectionClosed, EnvClient, WireError
from .model import PolicyConfig, SchedulerPolicy
from .sampling import plackett_luce_log_prob, sample_plackett_luce, select_action, topk_indices
from .session import TrainSession, policy_config_from_hello
from .trainer import PPOTrainer, Sample, TrainerConfig

__all__ = [
    "ConnectionClosed",
    "EnvClient",
    "PPOTrainer",
    "PolicyConfig",
    "Sample",
    "SchedulerPolicy",
    "TrainSession",
    "TrainerConfig",
    "WireError",
    "plackett_luce_log_prob",
    "policy_config_from_hello",
    "sample_plackett_luce",
    "select_action",
    "topk_indices",
]
