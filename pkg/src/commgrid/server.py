"""Environment server: runs an engine with an external agent as scheduler.

The session speaks the line protocol over a socket (or any LineTransport).
Each scheduling decision blocks the virtual clock while the agent thinks,
bounded by a wall-clock timeout; a late, invalid, or absent act falls back
to a random placement that produces no training sample. Terminal task
outcomes are pushed as reward messages the moment they happen.
"""

from __future__ import annotations

import hashlib
import logging
import select as _select
import socket
import sys
import time
from dataclasses import dataclass
from typing import Optional

from . import protocol
from .accounting import TaskOutcome
from .engine import Engine
from .config import ScenarioConfig
from .observations import encode_observation
from .scheduling import random_select
from .types import TaskSpec, TaskStatus

log = logging.getLogger(__name__)


class TransportClosed(Exception):
    """Peer went away (EOF or reset)."""


class SessionAbort(Exception):
    """Protocol violation that ends the session."""


class SocketTransport:
    """Blocking line-oriented wrapper around a connected stream socket."""

    def __init__(self, sock: socket.socket):
        self.sock = sock
        self._buf = bytearray()

    def send_line(self, line: str) -> None:
        try:
            self.sock.sendall(line.encode("utf-8") + b"\n")
        except OSError as e:
            raise TransportClosed(str(e)) from e

    def recv_line(self, timeout: Optional[float]) -> Optional[str]:
        """Next full line without its newline, or None on timeout."""
        deadline = None if timeout is None else time.monotonic() + timeout
        while True:
            nl = self._buf.find(b"\n")
            if nl >= 0:
                line = self._buf[:nl].decode("utf-8")
                del self._buf[:nl + 1]
                return line
            if deadline is not None:
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    return None
                self.sock.settimeout(remaining)
            else:
                self.sock.settimeout(None)
            try:
                chunk = self.sock.recv(65536)
            except socket.timeout:
                return None
            except OSError as e:
                raise TransportClosed(str(e)) from e
            if not chunk:
                raise TransportClosed("peer closed connection")
            self._buf.extend(chunk)

    def close(self) -> None:
        try:
            self.sock.close()
        except OSError:
            pass


class StdioTransport:
    """Line transport over this process's stdin/stdout."""

    def send_line(self, line: str) -> None:
        sys.stdout.write(line + "\n")
        sys.stdout.flush()

    def recv_line(self, timeout: Optional[float]) -> Optional[str]:
        ready, _, _ = _select.select([sys.stdin], [], [], timeout)
        if not ready:
            return None
        line = sys.stdin.readline()
        if line == "":
            raise TransportClosed("stdin closed")
        return line.rstrip("\n")

    def close(self) -> None:
        pass


def listen_for_agent(host: str, port: int, accept_timeout: Optional[float] = None
                     ) -> tuple[SocketTransport, tuple[str, int]]:
    """Bind, accept exactly one agent connection, and wrap it."""
    srv = socket.create_server((host, port))
    try:
        srv.settimeout(accept_timeout)
        conn, addr = srv.accept()
        conn.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        return SocketTransport(conn), addr
    finally:
        srv.close()


def connect_to_server(host: str, port: int, timeout: float = 30.0) -> SocketTransport:
    sock = socket.create_connection((host, port), timeout=timeout)
    sock.settimeout(None)
    sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
    return SocketTransport(sock)


@dataclass
class DecisionRecord:
    decision_id: int
    task_id: int
    digest: str
    chosen: list[int]
    dispatch_time: float
    open: bool = True


class AgentStrategy:
    """Scheduler slot that round-trips each decision through the session."""

    name = "agent"

    def __init__(self, session: "EnvSession"):
        self.session = session

    def select(self, spec: TaskSpec, cands: list[int], engine: Engine) -> list[int]:
        return self.session.decide(spec, cands, engine)


class EnvSession:
    """One agent connection driving episodes on demand.

    After the hello handshake the agent sends reset (optionally with a seed)
    to start an episode; the server then streams observe/reward messages and
    finishes with episode_end. A close (or EOF) ends the session.
    """

    def __init__(self, scenario: ScenarioConfig, transport, mode: str = "train",
                 trace_hook=None):
        self.scenario = scenario
        self.transport = transport
        self.mode = mode
        self.trace_hook = trace_hook
        self.k_max = max(t.gpus_required for t in scenario.workload.templates)
        self.engine: Optional[Engine] = None
        self.records: dict[int, DecisionRecord] = {}
        self.decision_seq = 0
        self.fallback_count = 0

    # -- plumbing ---------------------------------------------------------

    def _send(self, msg: dict) -> None:
        self.transport.send_line(protocol.encode_message(msg))

    def _abort(self, reason: str) -> None:
        try:
            self._send({"kind": "error", "reason": reason})
        except TransportClosed:
            pass
        raise SessionAbort(reason)

    # -- episode ------------------------------------------------------------

    def _build_engine(self, seed: Optional[int]) -> Engine:
        engine = Engine(self.scenario, seed=seed)
        engine.strategy = AgentStrategy(self)
        engine.outcome_listener = self._on_outcome
        if self.trace_hook is not None:
            engine.trace_hook = self.trace_hook
        return engine

    def run_episode(self, seed: Optional[int] = None) -> dict:
        self.engine = self._build_engine(seed)
        self.records = {}
        self.decision_seq = 0
        self.fallback_count = 0
        self.engine.run()
        leftover = [r for r in self.records.values() if r.open]
        assert not leftover, f"{len(leftover)} decisions still open after horizon"
        metrics = self.engine.metrics()
        self._send(protocol.episode_end_message(metrics))
        return metrics

    def serve_forever(self) -> None:
        """Handshake, then serve reset-driven episodes until close or EOF."""
        self._send(protocol.hello_message(self.mode, self.k_max))
        try:
            while True:
                line = self.transport.recv_line(None)
                msg = self._decode_or_abort(line)
                kind = msg["kind"]
                if kind == "reset":
                    self.run_episode(msg.get("seed"))
                elif kind == "close":
                    self._send({"kind": "bye"})
                    return
                else:
                    self._abort(f"expected reset or close, got {kind}")
        except TransportClosed:
            log.info("agent disconnected")
        except SessionAbort as e:
            log.warning("session aborted: %s", e)
        finally:
            self.transport.close()

    def run_single_episode(self, seed: Optional[int] = None) -> dict:
        """hello + one episode + bye; used by the run subcommand."""
        self._send(protocol.hello_message(self.mode, self.k_max))
        try:
            metrics = self.run_episode(seed)
            self._send({"kind": "bye"})
            return metrics
        finally:
            self.transport.close()

    # -- the decision round-trip ----------------------------------------------

    def decide(self, spec: TaskSpec, cands: list[int], engine: Engine) -> list[int]:
        decision_id = self.decision_seq
        self.decision_seq += 1
        obs = encode_observation(spec, cands, engine)
        observe = protocol.observe_message(
            decision_id, spec.task_id, spec.gpus_required,
            obs.task_features, obs.global_features,
            obs.candidate_ids, obs.gpu_features)
        line = protocol.encode_message(observe)
        digest = hashlib.sha1(line.encode("utf-8")).hexdigest()[:16]
        self.transport.send_line(line)
        deadline = time.monotonic() + self.scenario.decision_timeout_s
        while True:
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                return self._fallback(decision_id, "timeout", spec, cands, engine)
            reply = self.transport.recv_line(remaining)
            if reply is None:
                return self._fallback(decision_id, "timeout", spec, cands, engine)
            msg = self._decode_or_abort(reply)
            kind = msg["kind"]
            if kind == "act":
                if msg["decision_id"] != decision_id:
                    continue        # stale act from an already-resolved decision
                reason = protocol.validate_act(msg, spec.gpus_required, cands)
                if reason is not None:
                    return self._fallback(decision_id, reason, spec, cands, engine)
                chosen = [int(c) for c in msg["chosen"]]
                self.records[spec.task_id] = DecisionRecord(
                    decision_id=decision_id, task_id=spec.task_id,
                    digest=digest, chosen=chosen, dispatch_time=engine.now)
                return chosen
            if kind == "close":
                raise TransportClosed("agent closed mid-episode")
            self._abort(f"expected act, got {kind}")

    def _fallback(self, decision_id: int, reason: str, spec: TaskSpec,
                  cands: list[int], engine: Engine) -> list[int]:
        """Place the task randomly, tell the agent, record no sample."""
        try:
            self._send(protocol.nack_message(decision_id, reason))
        except TransportClosed:
            pass
        self.fallback_count += 1
        return random_select(cands, spec.gpus_required, engine.rng_agent)

    def _decode_or_abort(self, line: str) -> dict:
        try:
            return protocol.decode_message(line)
        except protocol.ProtocolError as e:
            self._abort(str(e))
            raise AssertionError("unreachable")

    # -- reward correlation ------------------------------------------------------

    def _on_outcome(self, outcome: TaskOutcome) -> None:
        record = self.records.get(outcome.task_id)
        if outcome.status is TaskStatus.EXPIRED:
            # Expired tasks were never dispatched, so no decision exists.
            assert record is None or not record.open
            return
        if record is None or not record.open:
            return    # fallback placement or untracked task: ledger-only
        record.open = False
        self._send(protocol.reward_message(
            record.decision_id, outcome.task_id, outcome.reward,
            outcome.components, outcome.status.value))
