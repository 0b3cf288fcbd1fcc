"""PPO on asynchronously rewarded scheduling decisions.

Each decision is treated as a single-step trajectory by default: its return
is its own terminal reward, which matches how the environment hands rewards
back (per task, whenever that task finishes). Chained discounted returns are
available behind multi_step_returns for episodic variants.

The update round snapshots model and optimizer state first; a non-finite
loss anywhere in the round rolls everything back and reports the abort
instead of training on garbage.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import torch

from .model import SchedulerPolicy
from .sampling import plackett_luce_log_prob


@dataclass(frozen=True)
class TrainerConfig:
    learning_rate: float = 3e-4
    gamma: float = 0.99
    batch_size: int = 32
    ppo_epochs: int = 4
    clip_eps: float = 0.2
    entropy_coeff: float = 0.01
    value_coeff: float = 0.5
    adv_norm_eps: float = 1e-8
    multi_step_returns: bool = False

    def __post_init__(self):
        for name in ("learning_rate", "gamma", "batch_size", "ppo_epochs",
                     "entropy_coeff", "value_coeff", "adv_norm_eps"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not 0.0 < self.clip_eps < 1.0:
            raise ValueError("clip_eps must lie in (0, 1)")

    def to_dict(self) -> dict:
        return {f: getattr(self, f) for f in (
            "learning_rate", "gamma", "batch_size", "ppo_epochs", "clip_eps",
            "entropy_coeff", "value_coeff", "adv_norm_eps", "multi_step_returns")}

    @classmethod
    def from_dict(cls, d: dict) -> "TrainerConfig":
        return cls(**d)


@dataclass
class Sample:
    """One decision held open until its task's terminal reward arrives."""

    decision_id: int
    task_features: list[float]
    gpu_features: list[list[float]]
    global_features: list[float]
    chosen: list[int]               # candidate indices, in sampled order
    old_log_prob: float
    old_value: float
    reward: Optional[float] = None


def compute_returns(rewards: Sequence[float], gamma: float,
                    multi_step: bool) -> list[float]:
    if not multi_step:
        return list(rewards)
    out = [0.0] * len(rewards)
    acc = 0.0
    for i in range(len(rewards) - 1, -1, -1):
        acc = rewards[i] + gamma * acc
        out[i] = acc
    return out


def normalize_advantages(adv: torch.Tensor, eps: float) -> torch.Tensor:
    std = adv.std(unbiased=False)
    return (adv - adv.mean()) / (std + eps)


def clipped_surrogate(ratio: torch.Tensor, adv: torch.Tensor,
                      clip_eps: float) -> torch.Tensor:
    clipped = torch.clamp(ratio, 1.0 - clip_eps, 1.0 + clip_eps)
    return torch.minimum(ratio * adv, clipped * adv)


def ppo_loss(model: SchedulerPolicy, samples: Sequence[Sample],
             returns: torch.Tensor, adv_norm: torch.Tensor,
             cfg: TrainerConfig) -> tuple[torch.Tensor, dict]:
    """Total loss over one mini-batch, plus the pieces for reporting."""
    log_probs, values, entropies = [], [], []
    for s in samples:
        logits, value = model(s.task_features, s.gpu_features, s.global_features)
        lp, ent = plackett_luce_log_prob(logits, s.chosen)
        log_probs.append(lp)
        values.append(value)
        entropies.append(ent)
    new_log_prob = torch.stack(log_probs)
    old_log_prob = torch.tensor([s.old_log_prob for s in samples],
                                dtype=torch.float64)
    ratio = torch.exp(new_log_prob - old_log_prob)
    policy_obj = clipped_surrogate(ratio, adv_norm, cfg.clip_eps).mean()
    value_loss = ((torch.stack(values) - returns) ** 2).mean()
    entropy = torch.stack(entropies).mean()
    total = -policy_obj + cfg.value_coeff * value_loss - cfg.entropy_coeff * entropy
    parts = {
        "policy_loss": float(-policy_obj.detach()),
        "value_loss": float(value_loss.detach()),
        "entropy": float(entropy.detach()),
        "ratios": ratio.detach(),
    }
    return total, parts


class PPOTrainer:
    """Owns the optimizer, the replay buffer, and the update round."""

    def __init__(self, model: SchedulerPolicy, cfg: TrainerConfig,
                 seed: Optional[int] = None):
        self.model = model
        self.cfg = cfg
        self.optimizer = torch.optim.Adam(model.parameters(), lr=cfg.learning_rate)
        self.shuffle_gen = torch.Generator()
        if seed is not None:
            self.shuffle_gen.manual_seed(seed)
        self.buffer: list[Sample] = []
        self.update_count = 0
        self.samples_consumed = 0

    def add(self, sample: Sample) -> None:
        assert sample.reward is not None, "sample closed without a reward"
        self.buffer.append(sample)

    def ready(self) -> bool:
        return len(self.buffer) >= self.cfg.batch_size

    def update(self) -> dict:
        """One PPO round over the whole buffer; clears it either way."""
        samples = self.buffer
        self.buffer = []
        n = len(samples)
        assert n > 0, "update on an empty buffer"
        rewards = [s.reward for s in samples]
        returns = torch.tensor(
            compute_returns(rewards, self.cfg.gamma, self.cfg.multi_step_returns),
            dtype=torch.float64)
        old_values = torch.tensor([s.old_value for s in samples], dtype=torch.float64)
        advantages = returns - old_values

        model_snapshot = copy.deepcopy(self.model.state_dict())
        opt_snapshot = copy.deepcopy(self.optimizer.state_dict())
        report = {"n_samples": n, "mean_reward": sum(rewards) / n,
                  "aborted": False, "policy_loss": math.nan,
                  "value_loss": math.nan, "entropy": math.nan}

        for _ in range(self.cfg.ppo_epochs):
            perm = torch.randperm(n, generator=self.shuffle_gen)
            for start in range(0, n, self.cfg.batch_size):
                idx = perm[start:start + self.cfg.batch_size].tolist()
                batch = [samples[i] for i in idx]
                adv_norm = normalize_advantages(advantages[idx],
                                                self.cfg.adv_norm_eps)
                loss, parts = ppo_loss(self.model, batch, returns[idx],
                                       adv_norm, self.cfg)
                if not torch.isfinite(loss):
                    self.model.load_state_dict(model_snapshot)
                    self.optimizer.load_state_dict(opt_snapshot)
                    report["aborted"] = True
                    return report
                self.optimizer.zero_grad()
                loss.backward()
                self.optimizer.step()
                report.update({k: parts[k] for k in
                               ("policy_loss", "value_loss", "entropy")})

        self.update_count += 1
        self.samples_consumed += n
        return report
