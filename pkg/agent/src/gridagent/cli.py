"""Command line: train against a serving environment, or evaluate a checkpoint."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from typing import Optional, Sequence

from .client import ConnectionClosed, EnvClient, WireError
from .model import CORES
from .session import TrainSession
from .trainer import TrainerConfig

log = logging.getLogger(__name__)


def _split_host_port(text: str) -> tuple[str, int]:
    host, _, port = text.rpartition(":")
    if not host or not port.isdigit():
        raise ValueError(f"--connect wants HOST:PORT, got {text!r}")
    return host, int(port)


def episode_seed_plan(base_seed: int, episodes: int) -> list[int]:
    """Distinct, reproducible per-episode seeds."""
    return [base_seed * 10_000 + i for i in range(episodes)]


def _connect(spec: str) -> EnvClient:
    host, port = _split_host_port(spec)
    try:
        return EnvClient.connect(host, port)
    except OSError as e:
        raise ConnectionClosed(f"cannot reach {host}:{port} ({e})") from e


def cmd_train(args) -> int:
    client = _connect(args.connect)
    trainer_cfg = TrainerConfig(learning_rate=args.lr) if args.lr else TrainerConfig()
    try:
        if args.resume:
            session = TrainSession.resume(
                client, args.resume, curve_path=args.curve,
                checkpoint_path=args.checkpoint,
                checkpoint_every=args.checkpoint_every)
        else:
            session = TrainSession.fresh(
                client, core=args.core, trainer_config=trainer_cfg,
                seed=args.seed, curve_path=args.curve,
                checkpoint_path=args.checkpoint,
                checkpoint_every=args.checkpoint_every)
        summary = session.train(episode_seed_plan(args.seed, args.episodes),
                                max_decisions=args.max_decisions)
    except ConnectionClosed as e:
        print(f"error: environment connection lost: {e}", file=sys.stderr)
        return 1
    except WireError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    finally:
        client.close()
    if args.checkpoint:
        session.save_checkpoint(args.checkpoint)
    print(f"trained on {summary['decisions']} decisions "
          f"({summary['updates']} updates, {len(summary['episodes'])} episodes)")
    return 0


def cmd_eval(args) -> int:
    client = _connect(args.connect)
    try:
        session = TrainSession.resume(client, args.checkpoint)
        results = session.evaluate(episode_seed_plan(args.seed, args.episodes))
    except (ConnectionClosed, WireError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    finally:
        client.close()
    for metrics in results:
        print(json.dumps({
            "completion_rate": metrics.get("completion_rate"),
            "deadline_satisfaction": metrics.get("deadline_satisfaction"),
            "mean_p_comm": metrics.get("mean_p_comm"),
            "counts": metrics.get("counts"),
        }, sort_keys=True))
    return 0


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = argparse.ArgumentParser(
        prog="gridagent",
        description="PPO scheduling agent for the commgrid environment")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train against a serving environment")
    p_train.add_argument("--connect", required=True, metavar="HOST:PORT")
    p_train.add_argument("--episodes", type=int, default=8)
    p_train.add_argument("--max-decisions", type=int, default=None)
    p_train.add_argument("--seed", type=int, default=0)
    p_train.add_argument("--core", choices=CORES, default="transformer")
    p_train.add_argument("--lr", type=float, default=None)
    p_train.add_argument("--curve", help="learning-curve CSV path")
    p_train.add_argument("--checkpoint", help="checkpoint file path")
    p_train.add_argument("--checkpoint-every", type=int, default=0,
                         metavar="N_UPDATES")
    p_train.add_argument("--resume", help="checkpoint to continue from")
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval", help="run greedy episodes from a checkpoint")
    p_eval.add_argument("--connect", required=True, metavar="HOST:PORT")
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--episodes", type=int, default=1)
    p_eval.add_argument("--seed", type=int, default=0)
    p_eval.set_defaults(func=cmd_eval)

    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (ConnectionClosed, WireError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
