"""Command-line entry points: run, sweep, serve, report.

`run` executes one simulation and writes metrics.json + trace.csv. `sweep`
crosses schedulers x preset knobs x seeds into one comparison CSV. `serve`
exposes a scenario to an external agent over TCP. `report` aggregates sweep
CSVs and exports plot-ready CDF tables.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import copy
import csv
import itertools
import json
import logging
import os
import sys
from typing import Optional, Sequence

from .config import (
    ConfigError,
    PRESET_NAMES,
    PRESET_SWEEP_AXES,
    ScenarioConfig,
    apply_setting,
    load_config_file,
    preset,
)
from .engine import Engine
from .server import EnvSession, TransportClosed, listen_for_agent

log = logging.getLogger(__name__)

TRACE_HEADER = ("time_s", "event", "task_id", "gpu_ids", "status",
                "reward", "cost_usd", "p_comm", "bandwidth_penalty")

SWEEP_METRIC_COLUMNS = (
    "completion_rate", "deadline_satisfaction", "goodput_per_hour",
    "mean_slowdown", "p95_slowdown", "cost_total_usd", "mean_p_comm",
    "arrived", "completed_on_time", "completed_late", "failed", "expired",
    "critical_completion_rate", "normal_completion_rate",
)


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _trace_row_to_csv(row: dict) -> list[str]:
    gpu_ids = row.get("gpu_ids")
    return [
        _fmt(row.get("time_s")),
        row.get("event") or "",
        _fmt(row.get("task_id")),
        ";".join(str(g) for g in gpu_ids) if gpu_ids else "",
        row.get("status") or "",
        _fmt(row.get("reward")),
        _fmt(row.get("cost_usd")),
        _fmt(row.get("p_comm")),
        _fmt(row.get("bandwidth_penalty")),
    ]


def build_scenario(args) -> ScenarioConfig:
    cfg = preset(args.preset) if args.preset else ScenarioConfig()
    if getattr(args, "config", None):
        cfg = load_config_file(args.config, base=cfg)
    for setting in getattr(args, "set", None) or []:
        if "=" not in setting:
            raise ConfigError(f"--set expects key=value, got {setting!r}")
        key, value = setting.split("=", 1)
        apply_setting(cfg, key, value)
    if getattr(args, "scheduler", None):
        cfg.scheduler = args.scheduler
    if getattr(args, "tasks", None):
        cfg.workload.n_tasks = args.tasks
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    cfg.validate()
    return cfg


def _write_metrics(path: str, metrics: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(metrics, fh, indent=2, sort_keys=True)
        fh.write("\n")


def run_simulation(cfg: ScenarioConfig, out_dir: Optional[str],
                   write_trace: bool = True) -> dict:
    """Execute one baseline-scheduled run and emit its files."""
    engine = Engine(cfg, seed=cfg.effective_seed())
    trace_fh = None
    try:
        if out_dir is not None and write_trace:
            trace_fh = open(os.path.join(out_dir, "trace.csv"), "w",
                            encoding="utf-8", newline="")
            writer = csv.writer(trace_fh, lineterminator="\n")
            writer.writerow(TRACE_HEADER)
            engine.trace_hook = lambda row: writer.writerow(_trace_row_to_csv(row))
        engine.run()
        metrics = engine.metrics()
    finally:
        if trace_fh is not None:
            trace_fh.close()
    if out_dir is not None:
        _write_metrics(os.path.join(out_dir, "metrics.json"), metrics)
    return metrics


def cmd_run(args) -> int:
    cfg = build_scenario(args)
    out_dir = args.out
    os.makedirs(out_dir, exist_ok=True)

    if cfg.scheduler == "agent":
        if args.listen is None:
            print("error: agent transport unavailable "
                  "(use --listen PORT and connect an agent)", file=sys.stderr)
            return 2
        transport, addr = listen_for_agent(args.host, args.listen)
        log.info("agent connected from %s", addr)
        trace_fh = open(os.path.join(out_dir, "trace.csv"), "w",
                        encoding="utf-8", newline="")
        writer = csv.writer(trace_fh, lineterminator="\n")
        writer.writerow(TRACE_HEADER)
        session = EnvSession(cfg, transport, mode=args.mode,
                             trace_hook=lambda row: writer.writerow(_trace_row_to_csv(row)))
        try:
            metrics = session.run_single_episode(cfg.effective_seed())
        except TransportClosed:
            print("error: agent disconnected mid-episode", file=sys.stderr)
            return 1
        finally:
            trace_fh.close()
        _write_metrics(os.path.join(out_dir, "metrics.json"), metrics)
    else:
        metrics = run_simulation(cfg, out_dir)

    counts = metrics["counts"]
    print(f"completed {counts['completed_on_time'] + counts['completed_late']}"
          f"/{counts['arrived']} tasks "
          f"(on-time {counts['completed_on_time']}, failed {counts['failed']}, "
          f"expired {counts['expired']}); total cost ${metrics['cost_total_usd']:.2f}")
    return 0


def _flatten_for_sweep(metrics: dict) -> dict:
    counts = metrics["counts"]
    per_class = metrics["per_class"]
    return {
        "completion_rate": metrics["completion_rate"],
        "deadline_satisfaction": metrics["deadline_satisfaction"],
        "goodput_per_hour": metrics["goodput_per_hour"],
        "mean_slowdown": metrics["mean_slowdown"],
        "p95_slowdown": metrics["p95_slowdown"],
        "cost_total_usd": metrics["cost_total_usd"],
        "mean_p_comm": metrics.get("mean_p_comm"),
        "arrived": counts["arrived"],
        "completed_on_time": counts["completed_on_time"],
        "completed_late": counts["completed_late"],
        "failed": counts["failed"],
        "expired": counts["expired"],
        "critical_completion_rate": per_class["critical"]["completion_rate"],
        "normal_completion_rate": per_class["normal"]["completion_rate"],
    }


def _sweep_member(job) -> dict:
    cfg, labels = job
    metrics = run_simulation(cfg, out_dir=None, write_trace=False)
    row = dict(labels)
    row.update(_flatten_for_sweep(metrics))
    return row


def cmd_sweep(args) -> int:
    base = build_scenario(args)
    schedulers = [s.strip() for s in args.schedulers.split(",") if s.strip()]
    if "agent" in schedulers:
        print("error: sweep drives baselines only; run the agent via serve",
              file=sys.stderr)
        return 2
    seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
    axes = PRESET_SWEEP_AXES.get(args.preset or "", {})
    axis_keys = list(axes)
    axis_values = [axes[k] for k in axis_keys]

    jobs = []
    for scheduler in schedulers:
        for combo in itertools.product(*axis_values) if axis_keys else [()]:
            for seed in seeds:
                cfg = copy.deepcopy(base)
                cfg.scheduler = scheduler
                cfg.seed = seed
                labels = {"scheduler": scheduler, "seed": seed}
                for key, value in zip(axis_keys, combo):
                    apply_setting(cfg, key, str(value))
                    labels[key] = value
                cfg.validate()
                jobs.append((cfg, labels))

    if args.workers > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=args.workers) as pool:
            rows = list(pool.map(_sweep_member, jobs))
    else:
        rows = [_sweep_member(job) for job in jobs]

    fieldnames = ["scheduler", "seed"] + axis_keys + list(SWEEP_METRIC_COLUMNS)
    os.makedirs(os.path.dirname(os.path.abspath(args.out)), exist_ok=True)
    with open(args.out, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fieldnames, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _fmt(row.get(k)) for k in fieldnames})
    print(f"wrote {len(rows)} rows to {args.out}")
    return 0


def cmd_serve(args) -> int:
    cfg = build_scenario(args)
    cfg.scheduler = "agent"
    cfg.validate()
    print(f"listening on {args.host}:{args.listen}", flush=True)
    transport, addr = listen_for_agent(args.host, args.listen)
    log.info("agent connected from %s", addr)
    session = EnvSession(cfg, transport, mode=args.mode)
    session.serve_forever()
    return 0


def cmd_report(args) -> int:
    os.makedirs(args.out, exist_ok=True)

    if args.sweep:
        rows = []
        for path in args.sweep:
            with open(path, "r", encoding="utf-8", newline="") as fh:
                rows.extend(csv.DictReader(fh))
        if rows:
            group_keys = [k for k in rows[0] if k not in SWEEP_METRIC_COLUMNS and k != "seed"]
            grouped: dict[tuple, list[dict]] = {}
            for row in rows:
                grouped.setdefault(tuple(row[k] for k in group_keys), []).append(row)
            out_path = os.path.join(args.out, "summary.csv")
            with open(out_path, "w", encoding="utf-8", newline="") as fh:
                writer = csv.writer(fh, lineterminator="\n")
                writer.writerow(group_keys + ["n_seeds"]
                                + [f"mean_{c}" for c in SWEEP_METRIC_COLUMNS])
                for key in sorted(grouped):
                    members = grouped[key]
                    means = []
                    for col in SWEEP_METRIC_COLUMNS:
                        vals = [float(m[col]) for m in members if m.get(col)]
                        means.append(_fmt(sum(vals) / len(vals)) if vals else "")
                    writer.writerow(list(key) + [str(len(members))] + means)
            print(f"wrote {out_path}")

    if args.metrics:
        with open(args.metrics, "r", encoding="utf-8") as fh:
            metrics = json.load(fh)
        hist = metrics["bandwidth_penalty_hist"]
        total = sum(hist["counts"]) or 1
        cum = 0
        out_path = os.path.join(args.out, "bandwidth_penalty_cdf.csv")
        with open(out_path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["penalty_upper_edge", "cumulative_fraction"])
            for edge, count in zip(hist["bin_edges"][1:], hist["counts"]):
                cum += count
                writer.writerow([_fmt(float(edge)), _fmt(cum / total)])
        print(f"wrote {out_path}")

        samples = metrics.get("latency_ms_samples") or []
        if samples:
            out_path = os.path.join(args.out, "latency_cdf.csv")
            with open(out_path, "w", encoding="utf-8", newline="") as fh:
                writer = csv.writer(fh, lineterminator="\n")
                writer.writerow(["latency_ms", "cumulative_fraction"])
                for i, sample in enumerate(samples, 1):
                    writer.writerow([_fmt(float(sample)), _fmt(i / len(samples))])
            print(f"wrote {out_path}")
    return 0


def _add_scenario_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--preset", choices=PRESET_NAMES + ("workload-patterns",),
                   help="named scenario preset")
    p.add_argument("--config", help="flat key=value config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override a single config key (repeatable)")
    p.add_argument("--seed", type=int, default=None)


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = argparse.ArgumentParser(
        prog="commgrid",
        description="Community GPU network scheduling simulator")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute one simulation")
    _add_scenario_flags(p_run)
    p_run.add_argument("--scheduler",
                       choices=("greedy", "random", "roundrobin", "agent"))
    p_run.add_argument("--tasks", type=int, help="shortcut for workload.n_tasks")
    p_run.add_argument("--out", default=".", help="output directory")
    p_run.add_argument("--listen", type=int, default=None,
                       help="TCP port to await the agent on (agent scheduler)")
    p_run.add_argument("--host", default="127.0.0.1")
    p_run.add_argument("--mode", choices=("train", "eval"), default="eval")
    p_run.set_defaults(func=cmd_run)

    p_sweep = sub.add_parser("sweep", help="run a scheduler/knob/seed grid")
    _add_scenario_flags(p_sweep)
    p_sweep.add_argument("--schedulers", default="greedy,random,roundrobin")
    p_sweep.add_argument("--seeds", default="0,1,2")
    p_sweep.add_argument("--out", default="sweep.csv")
    p_sweep.add_argument("--workers", type=int, default=1)
    p_sweep.set_defaults(func=cmd_sweep)

    p_serve = sub.add_parser("serve", help="serve one agent session over TCP")
    _add_scenario_flags(p_serve)
    p_serve.add_argument("--listen", type=int, required=True)
    p_serve.add_argument("--host", default="127.0.0.1")
    p_serve.add_argument("--mode", choices=("train", "eval"), default="train")
    p_serve.set_defaults(func=cmd_serve)

    p_report = sub.add_parser("report", help="aggregate sweeps / export CDFs")
    p_report.add_argument("--sweep", action="append", default=[],
                          help="sweep CSV to aggregate (repeatable)")
    p_report.add_argument("--metrics", help="metrics.json to export CDFs from")
    p_report.add_argument("--out", default="report")
    p_report.set_defaults(func=cmd_report)

    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
