"""Wire format: canonical JSON lines, message validation, act checking."""

import json
import math

import numpy as np
import pytest

from commgrid.protocol import (
    AGENT_KINDS,
    PROTOCOL_VERSION,
    SERVER_KINDS,
    ProtocolError,
    act_message,
    decode_message,
    encode_message,
    episode_end_message,
    hello_message,
    nack_message,
    observe_message,
    reset_message,
    reward_message,
    validate_act,
)


def test_encoding_is_canonical():
    line = encode_message({"kind": "act", "decision_id": 3, "chosen": [5, 1]})
    assert line == '{"chosen":[5,1],"decision_id":3,"kind":"act"}'
    assert "\n" not in line


def test_unicode_survives_without_escapes():
    line = encode_message({"kind": "error", "reason": "schéma inconnu"})
    assert "schéma" in line
    assert decode_message(line)["reason"] == "schéma inconnu"


def test_hello_shape():
    msg = hello_message("train", k_max=32)
    assert msg["protocol_version"] == PROTOCOL_VERSION == 1
    assert msg["mode"] == "train"
    assert msg["k_max"] == 32
    assert msg["feature_dims"] == {"task": 14, "gpu": 16, "global": 6}


def test_constructors_round_trip():
    messages = [
        hello_message("eval", 16),
        observe_message(0, 12, 2, [0.1] * 14, [0.5] * 6, [3, 7],
                        [[0.2] * 16, [0.3] * 16]),
        reward_message(4, 12, -1.1, {"fail": -1.0, "cost": -0.1}, "Failed"),
        nack_message(9, "timeout"),
        episode_end_message({"completion_rate": 0.5, "counts": {"arrived": 2}}),
        act_message(1, [4, 2]),
        reset_message(),
        reset_message(seed=7),
        {"kind": "close"},
        {"kind": "bye"},
        {"kind": "error", "reason": "x"},
    ]
    for msg in messages:
        line = encode_message(msg)
        assert decode_message(line) == msg
        assert encode_message(decode_message(line)) == line


def test_reset_seed_is_optional():
    assert "seed" not in reset_message()
    assert reset_message(seed=3)["seed"] == 3


def test_floats_round_trip_shortest_repr():
    rng = np.random.default_rng(0)
    for _ in range(500):
        x = float(rng.normal() * 10.0 ** rng.integers(-12, 12))
        line = encode_message({"kind": "reward", "decision_id": 0, "task_id": 0,
                               "reward": x, "components": {}, "terminal_status": "Failed"})
        assert decode_message(line)["reward"] == x


@pytest.mark.parametrize("bad", [
    "not json at all",
    "[1, 2, 3]",
    '"just a string"',
    "{}",
    '{"kind": "teleport"}',
    '{"kind": "act"}',                       # act needs decision_id + chosen
    '{"kind": "observe", "decision_id": 0}',  # missing most required fields
    '{"kind": "reward"}',
])
def test_decode_rejects_malformed(bad):
    with pytest.raises(ProtocolError):
        decode_message(bad)


def test_kind_tables():
    assert set(SERVER_KINDS) == {"hello", "observe", "reward", "nack",
                                 "episode_end", "bye", "error"}
    assert set(AGENT_KINDS) == {"act", "reset", "close"}


# -- act validation -------------------------------------------------------------

CANDS = [2, 5, 9, 11]


def act(chosen):
    return {"kind": "act", "decision_id": 0, "chosen": chosen}


def test_validate_act_accepts_valid_subsets():
    assert validate_act(act([5, 9]), 2, CANDS) is None
    assert validate_act(act([11]), 1, CANDS) is None
    assert validate_act(act([2, 5, 9, 11]), 4, CANDS) is None


@pytest.mark.parametrize("chosen,reason", [
    ("nope", "malformed-chosen"),
    ([1.5], "malformed-chosen"),
    ([True], "malformed-chosen"),
    ([5], "wrong-k"),              # k=2 below
    ([5, 9, 11], "wrong-k"),
    ([5, 5], "duplicate-ids"),
    ([5, 4], "not-in-candidate-set"),
])
def test_validate_act_rejections(chosen, reason):
    assert validate_act(act(chosen), 2, CANDS) == reason


def test_fuzz_round_trip_structured():
    # Random payloads over every message kind; the wire must be lossless.
    rng = np.random.default_rng(99)
    all_kinds = list(SERVER_KINDS) + list(AGENT_KINDS)
    for i in range(2000):
        kind = all_kinds[rng.integers(len(all_kinds))]
        n = int(rng.integers(1, 5))
        msg = {
            "hello": hello_message("train", int(rng.integers(1, 64))),
            "observe": observe_message(i, i + 1, n, [float(x) for x in rng.normal(size=14)],
                                       [float(x) for x in rng.normal(size=6)],
                                       list(range(n)),
                                       [[float(x) for x in rng.normal(size=16)]] * n),
            "reward": reward_message(i, i, float(rng.normal()),
                                     {"cost": float(rng.random())}, "Failed"),
            "nack": nack_message(i, "timeout"),
            "episode_end": episode_end_message({"n": int(rng.integers(100))}),
            "bye": {"kind": "bye"},
            "error": {"kind": "error", "reason": "oops"},
            "act": act_message(i, list(range(n))),
            "reset": reset_message(seed=int(rng.integers(2 ** 31)) if rng.random() < 0.5 else None),
            "close": {"kind": "close"},
        }[kind]
        for field in ("x_extra", "y_extra"):
            if rng.random() < 0.3:
                msg[field] = {"a": [1, [2, {"b": float(rng.random())}]], "s": "héllo ✓"}
        line = encode_message(msg)
        back = decode_message(line)
        assert back == json.loads(line)
        assert encode_message(back) == line
