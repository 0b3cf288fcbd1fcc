"""Turning logits into a k-GPU selection.

Evaluation picks the top k logits outright (ties to the lower index).
Training samples without replacement: draw one candidate from the softmax,
strike it from the pool, renormalize, repeat. The joint log-probability of
the resulting ordered tuple is the sum of the per-step log-probabilities,
and that quantity is what the PPO ratio differentiates through.
"""

from __future__ import annotations

from typing import Optional, Sequence

import torch


def topk_indices(logits: torch.Tensor, k: int) -> list[int]:
    n = logits.shape[0]
    if k > n:
        raise ValueError(f"k={k} exceeds candidate count {n}")
    order = sorted(range(n), key=lambda i: (-logits[i].item(), i))
    return order[:k]


def sample_plackett_luce(logits: torch.Tensor, k: int,
                         generator: Optional[torch.Generator] = None) -> list[int]:
    n = logits.shape[0]
    if k > n:
        raise ValueError(f"k={k} exceeds candidate count {n}")
    remaining = list(range(n))
    picked: list[int] = []
    flat = logits.detach()
    for _ in range(k):
        probs = torch.softmax(flat[remaining], dim=0)
        j = int(torch.multinomial(probs, 1, generator=generator).item())
        picked.append(remaining.pop(j))
    return picked


def plackett_luce_log_prob(logits: torch.Tensor,
                           chosen: Sequence[int]) -> tuple[torch.Tensor, torch.Tensor]:
    """Log-probability of an ordered selection, plus summed per-step entropy.

    Differentiable in the logits. Raises if chosen repeats an index or k
    exceeds the candidate count.
    """
    n = logits.shape[0]
    if len(chosen) > n:
        raise ValueError(f"k={len(chosen)} exceeds candidate count {n}")
    if len(set(chosen)) != len(chosen):
        raise ValueError("chosen indices must be distinct")
    remaining = list(range(n))
    log_prob = logits.new_zeros(())
    entropy = logits.new_zeros(())
    for c in chosen:
        pos = remaining.index(c)
        log_soft = torch.log_softmax(logits[remaining], dim=0)
        log_prob = log_prob + log_soft[pos]
        entropy = entropy - (log_soft.exp() * log_soft).sum()
        remaining.pop(pos)
    return log_prob, entropy


def select_action(logits: torch.Tensor, k: int, mode: str,
                  generator: Optional[torch.Generator] = None
                  ) -> tuple[list[int], torch.Tensor, torch.Tensor]:
    """Pick k candidate indices; returns (indices, log_prob, entropy)."""
    if mode == "eval":
        chosen = topk_indices(logits, k)
    elif mode == "train":
        chosen = sample_plackett_luce(logits, k, generator)
    else:
        raise ValueError(f"mode must be train or eval, got {mode!r}")
    log_prob, entropy = plackett_luce_log_prob(logits, chosen)
    return chosen, log_prob, entropy
