"""Command line entry point: run experiments, evaluate checkpoints, and
aggregate statistics across result directories."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .harness import (
    ExperimentConfig,
    build_env,
    build_state,
    build_supervisor,
    collect_stats,
    default_experiment,
    load_train_state,
    run_experiment,
)
from .training import Mode, evaluate


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="reil",
                                     description="Intervention-based imitation learning")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="train (online, offline, or live)")
    run.add_argument("--config", type=str, help="experiment config file (JSON)")
    run.add_argument("--mode", choices=[m.value for m in Mode])
    run.add_argument("--env", choices=["cartpole", "navsim"])
    run.add_argument("--episodes", type=int)
    run.add_argument("--runs", type=int)
    run.add_argument("--seed", type=int)
    run.add_argument("--offline", action="store_true")
    run.add_argument("--dataset", type=str)
    run.add_argument("--live", action="store_true")
    run.add_argument("--port", type=int)
    run.add_argument("--out", type=str)

    ev = sub.add_parser("eval", help="roll out a checkpoint under the safety gate")
    ev.add_argument("--checkpoint", type=str, required=True)
    ev.add_argument("--episodes", type=int, required=True)
    ev.add_argument("--env", choices=["cartpole", "navsim"], default="cartpole")
    ev.add_argument("--seed", type=int, default=0)
    ev.add_argument("--out", type=str)

    st = sub.add_parser("stats", help="summarize result directories")
    st.add_argument("--in", dest="in_dir", type=str, required=True)
    return parser


def _experiment_from_args(args) -> ExperimentConfig:
    if args.config:
        cfg = ExperimentConfig.load(args.config)
    else:
        cfg = default_experiment(args.env or "cartpole", args.mode or "REIL",
                                 seed=args.seed if args.seed is not None else 0)
    if args.env and not args.config:
        pass  # already built for that env
    elif args.env and args.config and args.env != cfg.env:
        cfg = default_experiment(args.env, cfg.algorithm.mode, seed=cfg.algorithm.seed)
    algo = cfg.algorithm.to_dict()
    if args.mode:
        algo["mode"] = args.mode
    if args.seed is not None:
        algo["seed"] = args.seed
    cfg.algorithm = type(cfg.algorithm).from_dict(algo)
    if args.episodes is not None:
        cfg.episodes = args.episodes
    if args.runs is not None:
        cfg.runs = args.runs
    if args.out:
        cfg.out_dir = args.out
    if args.live:
        cfg.live = True
    if args.port is not None:
        cfg.port = args.port
    return cfg


def cmd_run(args) -> int:
    cfg = _experiment_from_args(args)
    if args.live:
        from .bridge import serve_session_blocking
        print(f"serving live session on ws://localhost:{cfg.port}/session")
        serve_session_blocking(cfg, cfg.port)
        return 0
    if args.offline and not args.dataset:
        print("--offline requires --dataset", file=sys.stderr)
        return 2
    logs = run_experiment(cfg, dataset_path=args.dataset if args.offline else None)
    for i, log in enumerate(logs):
        print(f"run {i}: episodes={len(log)} supervised={log.total_supervised_steps} "
              f"success={log.any_success}")
    print(f"artifacts in {cfg.out_dir}")
    return 0


def cmd_eval(args) -> int:
    cfg = default_experiment(args.env, seed=args.seed)
    env = build_env(cfg)
    state = build_state(cfg)
    load_train_state(state, args.checkpoint)
    log = evaluate(env, build_supervisor(cfg), state, cfg.algorithm, args.episodes,
                   reward_spec=cfg.reward, seed=args.seed)
    for row in log.rows:
        err = "-" if row.action_error is None else f"{row.action_error:.4f}"
        print(f"episode {row.episode}: steps={row.steps} supervised={row.supervised_steps} "
              f"success={row.success} action_error={err}")
    if args.out:
        log.to_csv(args.out)
    return 0


def cmd_stats(args) -> int:
    summary = collect_stats(args.in_dir)
    for label, s in summary["algorithms"].items():
        flag = " (single run)" if s.single_run else ""
        print(f"{label}: runs={s.runs} successes={s.successes} "
              f"supervised={s.mean_supervised:.1f} ({s.std_supervised:.2f}){flag}")
    for pair, p in summary["welch_p"].items():
        print(f"welch {pair}: p={p:.4g}")
    out = {
        "algorithms": {k: vars(v) for k, v in summary["algorithms"].items()},
        "welch_p": summary["welch_p"],
    }
    print(json.dumps(out))
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "run":
        return cmd_run(args)
    if args.command == "eval":
        return cmd_eval(args)
    return cmd_stats(args)


if __name__ == "__main__":
    sys.exit(main())
