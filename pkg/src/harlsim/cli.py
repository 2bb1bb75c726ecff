"""Command-line entry: train, eval, sweep, inspect-checkpoint, validate-config.

Results are CSV files (one metrics row per run cell), event logs are
JSON-lines, checkpoints are the binary agent format. Sweeps can fan out over
processes; cap workers with the AIM_HARL_THREADS environment variable.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import os
import sys
from typing import List, Optional, Tuple

from .baselines import (
    CONTROLLER_NAMES,
    FcfsPlatoonController,
    FcfsVtlController,
    FixedTimeController,
    LqfController,
    build_phase_plan,
    run_controlled,
)
from .config import ConfigError, ScenarioConfig, load_config, parse_config, serialize_config
from .geometry import build_intersection
from .metrics import compute_metrics, metrics_csv_row, write_metrics_csv
from .rl.checkpoint import CheckpointError, describe
from .sim import World
from .training import FlatRunner, HarlRunner, TrainingRun, TrainSettings


def _scenario_from_args(args) -> ScenarioConfig:
    cfg = load_config(args.config) if args.config else ScenarioConfig()
    if args.desk_scale:
        cfg = cfg.desk_scale()
    if args.controller is not None:
        cfg.controller = args.controller
    if args.flow is not None:
        cfg.flow_rate = args.flow
    if args.hv_fraction is not None:
        cfg.hv_fraction = args.hv_fraction
    if args.seed is not None:
        cfg.seed = args.seed
    if args.duration is not None:
        cfg.duration = args.duration
    cfg.validate()
    return cfg


def make_rule_controller_from_config(cfg: ScenarioConfig, intersection):
    name = cfg.controller
    if name == "fixed_time":
        plan = build_phase_plan(intersection, cfg.signal_cycle, cfg.signal_yellow)
        return FixedTimeController(intersection, plan)
    if name == "lqf":
        plan = build_phase_plan(intersection, cfg.signal_cycle, cfg.signal_yellow)
        return LqfController(intersection, plan, cfg.lqf_min_green)
    if name == "fcfs_vtl":
        return FcfsVtlController(intersection, cfg.world_config().idm, cfg.fcfs_margin)
    if name == "fcfs_platoon":
        return FcfsPlatoonController(
            intersection,
            cfg.world_config().idm,
            cfg.fcfs_margin,
            max_platoon=cfg.platoon_max,
            gap_threshold=cfg.platoon_gap,
        )
    raise ValueError("not a rule controller: %r" % name)


def make_runner(cfg: ScenarioConfig, intersection):
    cls = HarlRunner if cfg.controller == "harl" else FlatRunner
    return cls(
        intersection,
        cfg.world_config(),
        params=cfg.harl,
        sac_config=cfg.sac,
        reservation_config=cfg.reservation,
        seed=cfg.seed,
        update_every=cfg.train.update_every,
    )


def _latest_tag(directory: str) -> Optional[str]:
    tags = set()
    if not os.path.isdir(directory):
        return None
    for name in os.listdir(directory):
        if name.endswith(".ckpt") and "_ep" in name:
            tags.add(name.rsplit("_", 1)[1].removesuffix(".ckpt"))
    return max(tags) if tags else None


def run_eval_cell(cfg: ScenarioConfig, checkpoint_dir: Optional[str], out_dir: Optional[str]):
    """One evaluation run; returns (metrics, events)."""
    intersection = build_intersection(cfg.intersection)
    if cfg.controller in ("harl", "flat_sac"):
        runner = make_runner(cfg, intersection)
        if checkpoint_dir:
            tag = _latest_tag(checkpoint_dir)
            if tag is None:
                raise FileNotFoundError("no checkpoints found in %r" % checkpoint_dir)
            runner.load_checkpoints(checkpoint_dir, tag)
        result = runner.run_episode(0, cfg.duration, train=False)
        events = result.events
    else:
        world = World(intersection, cfg.world_config())
        controller = make_rule_controller_from_config(cfg, intersection)
        events = run_controlled(world, controller, cfg.duration)
    metrics = compute_metrics(events, cfg.duration)
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        import json

        path = os.path.join(out_dir, "events.jsonl")
        with open(path, "w") as fh:
            fh.write(json.dumps({"schema_version": 1}) + "\n")
            for rec in events:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")
    return metrics, events


def cmd_train(args) -> int:
    cfg = _scenario_from_args(args)
    if cfg.controller not in ("harl", "flat_sac"):
        print("train requires --controller harl or flat_sac", file=sys.stderr)
        return 2
    out = args.out or "runs/train_%s_seed%d" % (cfg.controller, cfg.seed)
    intersection = build_intersection(cfg.intersection)
    runner = make_runner(cfg, intersection)
    settings = TrainSettings(
        episodes=cfg.train.episodes,
        episode_seconds=cfg.train.episode_seconds,
        checkpoint_every=cfg.train.checkpoint_every,
        reward_window=cfg.train.reward_window,
    )
    run = TrainingRun(runner, out, settings)
    run.run(resume=args.resume)
    with open(os.path.join(out, "scenario.json"), "w") as fh:
        fh.write(serialize_config(cfg))
    print("trained %d episodes -> %s" % (settings.episodes, out))
    return 0


def cmd_eval(args) -> int:
    cfg = _scenario_from_args(args)
    if cfg.controller in ("harl", "flat_sac") and args.checkpoint:
        if not os.path.isdir(args.checkpoint):
            print("checkpoint directory %r does not exist" % args.checkpoint, file=sys.stderr)
            return 2
    out = args.out or "runs/eval_%s_seed%d" % (cfg.controller, cfg.seed)
    os.makedirs(out, exist_ok=True)
    try:
        metrics, _ = run_eval_cell(cfg, args.checkpoint, out)
    except FileNotFoundError as exc:
        print(str(exc), file=sys.stderr)
        return 2
    row = metrics_csv_row(metrics, cfg.controller, cfg.flow_rate, cfg.hv_fraction, cfg.seed)
    write_metrics_csv(os.path.join(out, "metrics.csv"), [row])
    print(",".join(row))
    return 0


def _sweep_cell(payload) -> List[str]:
    text, controller, flow, seed, checkpoint = payload
    cfg = parse_config(text)
    cfg.controller = controller
    cfg.flow_rate = flow
    cfg.seed = seed
    cfg.validate()
    metrics, _ = run_eval_cell(cfg, checkpoint, None)
    return metrics_csv_row(metrics, controller, flow, cfg.hv_fraction, seed)


def cmd_sweep(args) -> int:
    cfg = _scenario_from_args(args)
    controllers = args.controllers.split(",") if args.controllers else list(CONTROLLER_NAMES)
    for name in controllers:
        if name not in CONTROLLER_NAMES:
            print("unknown controller %r" % name, file=sys.stderr)
            return 2
    flows = [float(x) for x in args.flows.split(",")] if args.flows else [450.0, 900.0, 1200.0]
    seeds = [int(x) for x in args.seeds.split(",")] if args.seeds else [cfg.seed]
    out = args.out or "runs/sweep"
    os.makedirs(out, exist_ok=True)
    base = serialize_config(cfg)
    cells = [
        (base, controller, flow, seed, args.checkpoint)
        for controller in controllers
        for flow in flows
        for seed in seeds
    ]
    workers = int(os.environ.get("AIM_HARL_THREADS", "1"))
    if workers > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_sweep_cell, cells))
    else:
        rows = [_sweep_cell(cell) for cell in cells]
    rows.sort(key=lambda r: (r[0], float(r[1]), int(r[3])))
    path = os.path.join(out, "sweep.csv")
    write_metrics_csv(path, rows)
    print("wrote %d rows -> %s" % (len(rows), path))
    return 0


def cmd_inspect(args) -> int:
    try:
        with open(args.checkpoint, "rb") as fh:
            header = describe(fh.read())
    except (OSError, CheckpointError) as exc:
        print("cannot inspect %r: %s" % (args.checkpoint, exc), file=sys.stderr)
        return 2
    import json

    print(json.dumps(header, indent=2, sort_keys=True))
    return 0


def cmd_validate(args) -> int:
    if not args.config:
        print("validate-config requires --config PATH", file=sys.stderr)
        return 2
    try:
        cfg = load_config(args.config)
        if args.desk_scale:
            cfg = cfg.desk_scale()
        cfg.validate()
    except (OSError, ConfigError) as exc:
        print("invalid config: %s" % exc, file=sys.stderr)
        return 2
    print("OK")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="harlsim",
        description="Intersection simulator with hierarchical adversarial RL scheduling",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in (
        ("train", cmd_train),
        ("eval", cmd_eval),
        ("sweep", cmd_sweep),
        ("inspect-checkpoint", cmd_inspect),
        ("validate-config", cmd_validate),
    ):
        p = sub.add_parser(name)
        p.add_argument("--config", help="scenario config JSON")
        p.add_argument("--controller", choices=CONTROLLER_NAMES)
        p.add_argument("--flow", type=float, help="veh/lane/h")
        p.add_argument("--hv-fraction", type=float, dest="hv_fraction")
        p.add_argument("--seed", type=int)
        p.add_argument("--duration", type=float, help="seconds of simulated time")
        p.add_argument("--out", help="output directory")
        p.add_argument("--checkpoint", help="checkpoint directory (file for inspect)")
        p.add_argument("--desk-scale", action="store_true", dest="desk_scale")
        p.add_argument("--resume", action="store_true")
        if name == "sweep":
            p.add_argument("--controllers", help="comma list (default: all)")
            p.add_argument("--flows", help="comma list (default: 450,900,1200)")
            p.add_argument("--seeds", help="comma list (default: config seed)")
        p.set_defaults(fn=fn)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print("invalid config: %s" % exc, file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
