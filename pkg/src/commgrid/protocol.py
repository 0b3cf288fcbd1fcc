"""Newline-delimited JSON wire protocol between simulator and agent.

One UTF-8 JSON object per line, keys sorted, compact separators, floats in
Python's shortest round-trip form. That canonical encoding makes
encode(decode(line)) == line hold byte-for-byte, which the tests fuzz.

Server to agent: hello, observe, reward, nack, episode_end, bye, error.
Agent to server: act, reset, close.
"""

from __future__ import annotations

import json
from typing import Optional, Sequence

PROTOCOL_VERSION = 1

SERVER_KINDS = ("hello", "observe", "reward", "nack", "episode_end", "bye", "error")
AGENT_KINDS = ("act", "reset", "close")

# Required fields per message kind (beyond "kind" itself).
_REQUIRED = {
    "hello": ("protocol_version", "mode", "k_max", "feature_dims"),
    "observe": ("decision_id", "task_id", "k", "task_features", "global_features", "candidates"),
    "reward": ("decision_id", "task_id", "reward", "components", "terminal_status"),
    "nack": ("decision_id", "reason"),
    "episode_end": ("metrics",),
    "bye": (),
    "error": ("reason",),
    "act": ("decision_id", "chosen"),
    "reset": (),
    "close": (),
}


class ProtocolError(ValueError):
    pass


def encode_message(msg: dict) -> str:
    """Canonical single-line encoding, no trailing newline."""
    return json.dumps(msg, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def decode_message(line: str) -> dict:
    try:
        msg = json.loads(line)
    except json.JSONDecodeError as e:
        raise ProtocolError(f"unparseable message: {e}") from e
    if not isinstance(msg, dict):
        raise ProtocolError("message must be a JSON object")
    kind = msg.get("kind")
    if kind not in _REQUIRED:
        raise ProtocolError(f"unknown message kind {kind!r}")
    missing = [f for f in _REQUIRED[kind] if f not in msg]
    if missing:
        raise ProtocolError(f"{kind} message missing fields {missing}")
    return msg


def hello_message(mode: str, k_max: int) -> dict:
    return {
        "kind": "hello",
        "protocol_version": PROTOCOL_VERSION,
        "mode": mode,
        "k_max": k_max,
        "feature_dims": {"task": 14, "gpu": 16, "global": 6},
    }


def observe_message(decision_id: int, task_id: int, k: int,
                    task_features: list[float], global_features: list[float],
                    candidate_ids: list[int], gpu_features: list[list[float]]) -> dict:
    return {
        "kind": "observe",
        "decision_id": decision_id,
        "task_id": task_id,
        "k": k,
        "task_features": task_features,
        "global_features": global_features,
        "candidates": [
            {"gpu_id": gid, "features": feats}
            for gid, feats in zip(candidate_ids, gpu_features)
        ],
    }


def reward_message(decision_id: int, task_id: int, reward: float,
                   components: dict, terminal_status: str) -> dict:
    return {
        "kind": "reward",
        "decision_id": decision_id,
        "task_id": task_id,
        "reward": reward,
        "components": components,
        "terminal_status": terminal_status,
    }


def nack_message(decision_id: int, reason: str) -> dict:
    return {"kind": "nack", "decision_id": decision_id, "reason": reason}


def episode_end_message(metrics: dict) -> dict:
    return {"kind": "episode_end", "metrics": metrics}


def act_message(decision_id: int, chosen: Sequence[int]) -> dict:
    return {"kind": "act", "decision_id": decision_id, "chosen": list(chosen)}


def reset_message(seed: Optional[int] = None) -> dict:
    msg: dict = {"kind": "reset"}
    if seed is not None:
        msg["seed"] = seed
    return msg


def validate_act(msg: dict, k: int, candidate_ids: Sequence[int]) -> Optional[str]:
    """Check an act against the pending decision; return a nack reason or None."""
    chosen = msg.get("chosen")
    # bool is an int subclass in Python but a distinct JSON type; reject it.
    if not isinstance(chosen, list) or not all(
        isinstance(c, int) and not isinstance(c, bool) for c in chosen
    ):
        return "malformed-chosen"
    if len(chosen) != k:
        return "wrong-k"
    if len(set(chosen)) != len(chosen):
        return "duplicate-ids"
    cand_set = set(candidate_ids)
    if any(c not in cand_set for c in chosen):
        return "not-in-candidate-set"
    return None
