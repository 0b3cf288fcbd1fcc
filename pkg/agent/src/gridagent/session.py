"""Protocol-driven training and evaluation loops.

A TrainSession acts on every observe, keeps the decision open until the
matching reward lands, and runs a PPO update whenever the buffer reaches
batch size. Checkpoints capture the complete mutable state (parameters,
optimizer, both RNG streams, buffer, open decisions, counters), so a resumed
session fed the same remaining messages reproduces the same updates bit for
bit. Learning-curve rows go to a CSV with columns
step,mean_reward,policy_loss,value_loss,entropy.
"""

from __future__ import annotations

import csv
import logging
import math
from typing import Iterable, Optional

import torch

from .client import ConnectionClosed, EnvClient, WireError
from .model import PolicyConfig, SchedulerPolicy
from .sampling import select_action
from .trainer import PPOTrainer, Sample, TrainerConfig

log = logging.getLogger(__name__)

CURVE_COLUMNS = ("step", "mean_reward", "policy_loss", "value_loss", "entropy")


def policy_config_from_hello(hello: dict, core: str = "transformer",
                             **overrides) -> PolicyConfig:
    dims = hello["feature_dims"]
    return PolicyConfig(task_dim=dims["task"], gpu_dim=dims["gpu"],
                        global_dim=dims["global"], core=core, **overrides)


class TrainSession:
    """One agent endpoint: a policy, its trainer, and the message pump."""

    def __init__(self, client: EnvClient, policy_config: PolicyConfig,
                 trainer_config: Optional[TrainerConfig] = None,
                 seed: int = 0, curve_path: Optional[str] = None,
                 checkpoint_path: Optional[str] = None,
                 checkpoint_every: int = 0):
        self.client = client
        self.policy_config = policy_config
        self.trainer_config = trainer_config or TrainerConfig()
        self.seed = seed
        self.model = SchedulerPolicy(policy_config, seed=seed)
        self.trainer = PPOTrainer(self.model, self.trainer_config, seed=seed + 1)
        self.sample_gen = torch.Generator()
        self.sample_gen.manual_seed(seed + 2)
        self.open: dict[int, Sample] = {}
        self.decisions = 0
        self.curve_path = curve_path
        self.checkpoint_path = checkpoint_path
        self.checkpoint_every = checkpoint_every
        self._curve_header_written = False

    # -- wiring -------------------------------------------------------------

    @classmethod
    def fresh(cls, client: EnvClient, core: str = "transformer",
              **kw) -> "TrainSession":
        """Handshake first, then size the policy from the hello message."""
        hello = client.handshake()
        return cls(client, policy_config_from_hello(hello, core=core), **kw)

    def _answer_observe(self, msg: dict, mode: str) -> None:
        candidates = msg["candidates"]
        gpu_ids = [c["gpu_id"] for c in candidates]
        gpu_features = [c["features"] for c in candidates]
        with torch.no_grad():
            logits, value = self.model(msg["task_features"], gpu_features,
                                       msg["global_features"])
        chosen_idx, log_prob, _ = select_action(logits, msg["k"], mode,
                                                self.sample_gen)
        self.client.act(msg["decision_id"], [gpu_ids[i] for i in chosen_idx])
        self.decisions += 1
        if mode == "train":
            self.open[msg["decision_id"]] = Sample(
                decision_id=msg["decision_id"],
                task_features=msg["task_features"],
                gpu_features=gpu_features,
                global_features=msg["global_features"],
                chosen=chosen_idx,
                old_log_prob=float(log_prob),
                old_value=float(value),
            )

    def _close_sample(self, msg: dict) -> Optional[dict]:
        sample = self.open.pop(msg["decision_id"], None)
        if sample is None:
            return None      # fallback placement or a pre-resume decision
        sample.reward = float(msg["reward"])
        self.trainer.add(sample)
        if self.trainer.ready():
            report = self.trainer.update()
            self._append_curve_row(report)
            if (self.checkpoint_path and self.checkpoint_every
                    and self.trainer.update_count % self.checkpoint_every == 0):
                self.save_checkpoint(self.checkpoint_path)
            return report
        return None

    def _append_curve_row(self, report: dict) -> None:
        if self.curve_path is None:
            return
        mode = "a" if self._curve_header_written else "w"
        with open(self.curve_path, mode, encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            if not self._curve_header_written:
                writer.writerow(CURVE_COLUMNS)
                self._curve_header_written = True
            writer.writerow([self.decisions, repr(report["mean_reward"]),
                             repr(report["policy_loss"]),
                             repr(report["value_loss"]),
                             repr(report["entropy"])])
        if not report["aborted"]:
            for key in ("mean_reward", "policy_loss", "value_loss", "entropy"):
                assert math.isfinite(report[key]), f"non-finite {key} logged"

    # -- loops ---------------------------------------------------------------

    def train(self, episode_seeds: Iterable[int],
              max_decisions: Optional[int] = None, close: bool = True) -> dict:
        """Run training episodes until the seed list or decision budget ends.

        Returns a summary: decisions taken, updates run, episode metrics.
        On transport loss, checkpoints (if configured) and re-raises.
        Pass close=False to keep the connection for later episodes.
        """
        episode_metrics: list[dict] = []
        try:
            for ep_seed in episode_seeds:
                if max_decisions is not None and self.decisions >= max_decisions:
                    break
                self.client.reset(seed=ep_seed)
                episode_metrics.append(self._pump_episode("train"))
            if close:
                self._close()
        except ConnectionClosed:
            if self.checkpoint_path:
                self.save_checkpoint(self.checkpoint_path)
            raise
        return {
            "decisions": self.decisions,
            "updates": self.trainer.update_count,
            "episodes": episode_metrics,
        }

    def evaluate(self, episode_seeds: Iterable[int], close: bool = True) -> list[dict]:
        """Deterministic top-k episodes; returns their metrics."""
        out = []
        for ep_seed in episode_seeds:
            self.client.reset(seed=ep_seed)
            out.append(self._pump_episode("eval"))
        if close:
            self._close()
        return out

    def _close(self) -> None:
        self.client.send({"kind": "close"})
        msg = self.client.recv()
        if msg["kind"] != "bye":
            raise WireError(f"expected bye, got {msg['kind']!r}")

    def _pump_episode(self, mode: str) -> dict:
        while True:
            msg = self.client.recv()
            kind = msg["kind"]
            if kind == "observe":
                self._answer_observe(msg, mode)
            elif kind == "reward":
                if mode == "train":
                    self._close_sample(msg)
            elif kind == "nack":
                self.open.pop(msg["decision_id"], None)
                log.warning("decision %s nacked: %s", msg["decision_id"],
                            msg.get("reason"))
            elif kind == "episode_end":
                if self.open:
                    # The server resolves every dispatched task by horizon
                    # end, so anything left has no reward coming. Drop it.
                    log.warning("dropping %d unresolved decisions", len(self.open))
                    self.open.clear()
                return msg["metrics"]
            elif kind == "error":
                raise WireError(f"environment error: {msg.get('reason')}")
            else:
                raise WireError(f"unexpected {kind!r} mid-episode")

    # -- checkpointing ------------------------------------------------------

    def save_checkpoint(self, path: str) -> None:
        torch.save({
            "policy_config": self.policy_config.to_dict(),
            "trainer_config": self.trainer_config.to_dict(),
            "seed": self.seed,
            "model_state": self.model.state_dict(),
            "optimizer_state": self.trainer.optimizer.state_dict(),
            "sample_gen_state": self.sample_gen.get_state(),
            "shuffle_gen_state": self.trainer.shuffle_gen.get_state(),
            "buffer": self.trainer.buffer,
            "open": self.open,
            "decisions": self.decisions,
            "update_count": self.trainer.update_count,
            "samples_consumed": self.trainer.samples_consumed,
            "curve_header_written": self._curve_header_written,
        }, path)

    @classmethod
    def resume(cls, client: EnvClient, path: str,
               curve_path: Optional[str] = None,
               checkpoint_path: Optional[str] = None,
               checkpoint_every: int = 0) -> "TrainSession":
        """Rebuild a session mid-training from a checkpoint file."""
        state = torch.load(path, weights_only=False)
        client.handshake()
        session = cls(client, PolicyConfig.from_dict(state["policy_config"]),
                      TrainerConfig.from_dict(state["trainer_config"]),
                      seed=state["seed"], curve_path=curve_path,
                      checkpoint_path=checkpoint_path,
                      checkpoint_every=checkpoint_every)
        session.model.load_state_dict(state["model_state"])
        session.trainer.optimizer.load_state_dict(state["optimizer_state"])
        session.sample_gen.set_state(state["sample_gen_state"])
        session.trainer.shuffle_gen.set_state(state["shuffle_gen_state"])
        session.trainer.buffer = list(state["buffer"])
        session.trainer.update_count = state["update_count"]
        session.trainer.samples_consumed = state["samples_consumed"]
        session.open = dict(state["open"])
        session.decisions = state["decisions"]
        session._curve_header_written = state["curve_header_written"]
        return session
