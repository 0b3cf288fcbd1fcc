"""Client half of the newline-JSON environment protocol.

One UTF-8 JSON object per line, canonical form (sorted keys, compact
separators, raw unicode). The environment speaks hello/observe/reward/nack/
episode_end/bye/error; this side sends act/reset/close.
"""

from __future__ import annotations

import json
import socket
from typing import Optional, Sequence

PROTOCOL_VERSION = 1


class WireError(Exception):
    """The peer sent something we cannot work with."""


class ConnectionClosed(Exception):
    """The environment went away."""


def encode(msg: dict) -> str:
    return json.dumps(msg, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def decode(line: str) -> dict:
    try:
        msg = json.loads(line)
    except json.JSONDecodeError as e:
        raise WireError(f"unparseable line from environment: {e}") from e
    if not isinstance(msg, dict) or "kind" not in msg:
        raise WireError(f"expected an object with a kind, got {line[:80]!r}")
    return msg


class EnvClient:
    """Blocking protocol connection to one environment session."""

    def __init__(self, sock: socket.socket):
        self.sock = sock
        self._reader = sock.makefile("r", encoding="utf-8", newline="\n")

    @classmethod
    def connect(cls, host: str, port: int, timeout: float = 30.0) -> "EnvClient":
        sock = socket.create_connection((host, port), timeout=timeout)
        sock.settimeout(None)
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        return cls(sock)

    def send(self, msg: dict) -> None:
        try:
            self.sock.sendall((encode(msg) + "\n").encode("utf-8"))
        except OSError as e:
            raise ConnectionClosed(str(e)) from e

    def recv(self) -> dict:
        try:
            line = self._reader.readline()
        except OSError as e:
            raise ConnectionClosed(str(e)) from e
        if line == "":
            raise ConnectionClosed("environment closed the connection")
        return decode(line.rstrip("\n"))

    def handshake(self) -> dict:
        hello = self.recv()
        if hello.get("kind") != "hello":
            raise WireError(f"expected hello, got {hello.get('kind')!r}")
        if hello.get("protocol_version") != PROTOCOL_VERSION:
            raise WireError(f"protocol version {hello.get('protocol_version')} "
                            f"unsupported (want {PROTOCOL_VERSION})")
        return hello

    def act(self, decision_id: int, gpu_ids: Sequence[int]) -> None:
        self.send({"kind": "act", "decision_id": decision_id,
                   "chosen": [int(g) for g in gpu_ids]})

    def reset(self, seed: Optional[int] = None) -> None:
        msg: dict = {"kind": "reset"}
        if seed is not None:
            msg["seed"] = int(seed)
        self.send(msg)

    def close(self) -> None:
        try:
            self._reader.close()
        finally:
            try:
                self.sock.close()
            except OSError:
                pass
