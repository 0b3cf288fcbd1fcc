"""Policy network: shared embeddings, a set encoder, actor and critic heads.

Candidates are an unordered set, so there is no positional encoding anywhere.
That buys two exact symmetries the tests lean on: permuting candidate rows
permutes the actor logits the same way, and leaves the critic value unchanged.

Everything runs in float64. The models are small and CPU-bound, and the
finite-difference gradient check needs the headroom.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import torch
from torch import nn

CORES = ("transformer", "mlp")


@dataclass(frozen=True)
class PolicyConfig:
    d_model: int = 128
    n_heads: int = 4
    encoder_layers: int = 2
    task_dim: int = 14
    gpu_dim: int = 16
    global_dim: int = 6
    ff_mult: int = 4
    core: str = "transformer"

    def __post_init__(self):
        if self.d_model % self.n_heads != 0:
            raise ValueError("d_model must be divisible by n_heads")
        if self.core not in CORES:
            raise ValueError(f"core must be one of {CORES}, got {self.core!r}")
        for field in ("d_model", "n_heads", "encoder_layers", "task_dim",
                      "gpu_dim", "global_dim", "ff_mult"):
            if getattr(self, field) <= 0:
                raise ValueError(f"{field} must be positive")

    def to_dict(self) -> dict:
        return {f: getattr(self, f) for f in (
            "d_model", "n_heads", "encoder_layers", "task_dim", "gpu_dim",
            "global_dim", "ff_mult", "core")}

    @classmethod
    def from_dict(cls, d: dict) -> "PolicyConfig":
        return cls(**d)


class MultiHeadSelfAttention(nn.Module):
    """Plain scaled dot-product self-attention over the candidate set.

    Hand-rolled rather than nn.MultiheadAttention so the per-head weight
    matrices are exportable after every forward (self.last_weights).
    """

    def __init__(self, d_model: int, n_heads: int):
        super().__init__()
        self.n_heads = n_heads
        self.d_head = d_model // n_heads
        self.q_proj = nn.Linear(d_model, d_model)
        self.k_proj = nn.Linear(d_model, d_model)
        self.v_proj = nn.Linear(d_model, d_model)
        self.out_proj = nn.Linear(d_model, d_model)
        self.last_weights: Optional[torch.Tensor] = None    # [heads, N, N]

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        n = x.shape[0]
        def split(t):
            return t.reshape(n, self.n_heads, self.d_head).transpose(0, 1)
        q, k, v = split(self.q_proj(x)), split(self.k_proj(x)), split(self.v_proj(x))
        scores = q @ k.transpose(-2, -1) / math.sqrt(self.d_head)
        weights = torch.softmax(scores, dim=-1)
        self.last_weights = weights.detach()
        mixed = (weights @ v).transpose(0, 1).reshape(n, -1)
        return self.out_proj(mixed)


class EncoderLayer(nn.Module):
    """Pre-norm block: x + MHA(LN(x)), then x + FF(LN(x))."""

    def __init__(self, d_model: int, n_heads: int, ff_mult: int):
        super().__init__()
        self.ln1 = nn.LayerNorm(d_model)
        self.attn = MultiHeadSelfAttention(d_model, n_heads)
        self.ln2 = nn.LayerNorm(d_model)
        self.ff = nn.Sequential(
            nn.Linear(d_model, ff_mult * d_model),
            nn.GELU(),
            nn.Linear(ff_mult * d_model, d_model),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = x + self.attn(self.ln1(x))
        return x + self.ff(self.ln2(x))


class PerCandidateBlock(nn.Module):
    """Ablation block: the same residual feed-forward shape, no attention.

    Each candidate row passes through independently, so there is no way for
    one GPU's features to influence another's logit.
    """

    def __init__(self, d_model: int, width: int):
        super().__init__()
        self.ln = nn.LayerNorm(d_model)
        self.ff = nn.Sequential(
            nn.Linear(d_model, width),
            nn.GELU(),
            nn.Linear(width, d_model),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return x + self.ff(self.ln(x))


def _transformer_core_params(cfg: PolicyConfig) -> int:
    d, f = cfg.d_model, cfg.ff_mult
    per_layer = (
        2 * d                        # ln1
        + 4 * (d * d + d)            # q, k, v, out projections
        + 2 * d                      # ln2
        + (d * f * d + f * d)        # ff up
        + (f * d * d + d)            # ff down
    )
    return cfg.encoder_layers * per_layer


def _solve_mlp_width(cfg: PolicyConfig) -> int:
    """Width that puts the per-candidate stack inside 10% of the
    transformer core's parameter count (same depth)."""
    target = _transformer_core_params(cfg)
    d, blocks = cfg.d_model, cfg.encoder_layers
    # Block params: 2d (LN) + d*w + w (up) + w*d + d (down).
    width = max(1, round((target / blocks - 3 * d) / (2 * d + 1)))
    got = blocks * (3 * d + width * (2 * d + 1))
    assert abs(got - target) <= 0.10 * target, \
        f"mlp width solver missed the budget: {got} vs {target}"
    return width


class SchedulerPolicy(nn.Module):
    """Maps one observation (task, candidate GPUs, global state) to
    per-candidate logits and a scalar state value."""

    def __init__(self, config: PolicyConfig, seed: Optional[int] = None):
        super().__init__()
        self.config = config
        d = config.d_model
        # Shared projections into the model space. Bias-free: a candidate's
        # embedding is a pure linear function of its features.
        self.embed_gpu = nn.Linear(config.gpu_dim, d, bias=False)
        self.embed_task = nn.Linear(config.task_dim, d, bias=False)
        self.embed_global = nn.Linear(config.global_dim, d, bias=False)
        if config.core == "transformer":
            self.core = nn.ModuleList(
                EncoderLayer(d, config.n_heads, config.ff_mult)
                for _ in range(config.encoder_layers))
        else:
            width = _solve_mlp_width(config)
            self.core = nn.ModuleList(
                PerCandidateBlock(d, width) for _ in range(config.encoder_layers))
        self.actor = nn.Linear(d, 1)
        self.critic = nn.Linear(d, 1)
        self.double()
        self._init_parameters(seed)

    def _init_parameters(self, seed: Optional[int]) -> None:
        gen = torch.Generator()
        if seed is not None:
            gen.manual_seed(seed)
        for name, p in sorted(self.named_parameters()):
            if p.dim() >= 2:
                bound = 1.0 / math.sqrt(p.shape[-1])
                with torch.no_grad():
                    p.uniform_(-bound, bound, generator=gen)
            elif "bias" in name:
                nn.init.zeros_(p)
        # LayerNorm affine terms keep their identity defaults (weight 1, bias 0).

    def forward(self, task_f: torch.Tensor, gpu_f: torch.Tensor,
                global_f: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """Returns (logits [N], value scalar) for one observation."""
        task_f = torch.as_tensor(task_f, dtype=torch.float64)
        gpu_f = torch.as_tensor(gpu_f, dtype=torch.float64)
        global_f = torch.as_tensor(global_f, dtype=torch.float64)
        cfg = self.config
        if (task_f.shape != (cfg.task_dim,) or global_f.shape != (cfg.global_dim,)
                or gpu_f.dim() != 2 or gpu_f.shape[1] != cfg.gpu_dim
                or gpu_f.shape[0] < 1):
            raise ValueError(
                f"feature shape mismatch: task {tuple(task_f.shape)}, "
                f"gpus {tuple(gpu_f.shape)}, global {tuple(global_f.shape)}")
        h = self.embed_gpu(gpu_f) + self.embed_task(task_f) + self.embed_global(global_f)
        for block in self.core:
            h = block(h)
        logits = self.actor(h).squeeze(-1)
        value = self.critic(h.mean(dim=0)).squeeze(-1)
        return logits, value

    def attention_maps(self) -> list[torch.Tensor]:
        """Per-layer [heads, N, N] weights from the most recent forward."""
        if self.config.core != "transformer":
            return []
        return [layer.attn.last_weights for layer in self.core]

    def core_parameter_count(self) -> int:
        return sum(p.numel() for p in self.core.parameters())

    def parameter_count(self) -> int:
        return sum(p.numel() for p in self.parameters())
