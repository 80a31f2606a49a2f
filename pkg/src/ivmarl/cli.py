"""Command-line entry points: train, eval, sweep, plot.

Exit codes: 0 success, 1 validation problem (bad config, flags, or files),
2 runtime failure.  Diagnostics go to stderr; machine-readable results go to
stdout or files only.
"""

from __future__ import annotations

import argparse
import re
import sys
from dataclasses import replace
from pathlib import Path

from .config import apply_overrides, load_run_config, resolve_profile
from .env import BattleEnv
from .errors import CheckpointError, ConfigError
from .harness import (evaluate, load_checkpoint, rng_stream, rollout_episode,
                      run_file_stem, trace_writer, train)
from .learners import ALGORITHMS
from .metrics import METRIC_NAMES, csv_row, read_csv, render_chart
from .rewards import PERSONALITIES, preset_profiles

_METRICS_FILE_RE = re.compile(
    r"metrics_(?P<alg>[a-z]+)_(?P<personality>[a-z]+)_seed(?P<seed>\d+)\.csv")


def _fail(message: str, code: int) -> int:
    print(f"error: {message}", file=sys.stderr)
    return code


def cmd_train(args) -> int:
    try:
        config = apply_overrides(load_run_config(args.config),
                                 seed=args.seed, out_dir=args.out)
        config.validate()
    except (ConfigError, ValueError) as exc:
        return _fail(str(exc), 1)
    try:
        summary = train(config)
    except OSError as exc:
        return _fail(f"run failed: {exc}", 2)
    print(f"wrote {summary.metrics_path} and {summary.checkpoint_path} "
          f"({len(summary.records)} evaluations, "
          f"{summary.duration_s:.1f}s)", file=sys.stderr)
    return 0


def cmd_eval(args) -> int:
    try:
        config = apply_overrides(load_run_config(args.config), seed=args.seed)
        config.validate()
    except (ConfigError, ValueError) as exc:
        return _fail(str(exc), 1)
    if args.episodes < 1:
        return _fail("--episodes must be >= 1", 1)
    try:
        nets, _, step = load_checkpoint(args.checkpoint)
    except (OSError, CheckpointError) as exc:
        return _fail(str(exc), 1)
    env = BattleEnv(config.scenario)
    agent = nets.get("agent")
    if agent is None:
        return _fail("checkpoint has no agent network", 1)
    expected = env.obs_size + env.n_actions
    if (agent.layers[0].in_width != expected
            or agent.layers[-1].out_width != env.n_actions):
        return _fail(
            f"checkpoint width mismatch: agent network expects "
            f"{agent.layers[0].in_width} inputs, scenario produces {expected}", 1)
    profiles = [config.profile] * env.n_agents
    try:
        record = evaluate(env, agent, profiles, args.episodes,
                          rng_stream(config.seed, "cli-eval"), step=step)
        if args.trace:
            with open(args.trace, "w") as handle:
                rollout_episode(env, agent, profiles, 0.0,
                                rng_stream(config.seed, "cli-trace"), None,
                                on_step=trace_writer(env, handle))
    except OSError as exc:
        return _fail(f"evaluation failed: {exc}", 2)
    print(csv_row(record))
    return 0


def cmd_sweep(args) -> int:
    try:
        base = apply_overrides(load_run_config(args.config), out_dir=args.out)
    except ConfigError as exc:
        return _fail(str(exc), 1)
    personalities = [p.strip() for p in args.personalities.split(",") if p.strip()]
    algorithms = [a.strip() for a in args.algorithms.split(",") if a.strip()]
    try:
        seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
    except ValueError:
        return _fail("--seeds must be a comma-separated list of integers", 1)
    if not personalities or not algorithms or not seeds:
        return _fail("--personalities, --algorithms, and --seeds must be "
                     "non-empty", 1)
    for personality in personalities:
        if personality not in PERSONALITIES:
            return _fail(f"unknown personality {personality!r}", 1)
    for algorithm in algorithms:
        if algorithm not in ALGORITHMS:
            return _fail(f"unknown algorithm {algorithm!r}", 1)
    for algorithm in algorithms:
        for personality in personalities:
            profile = resolve_profile({"personality": personality}, algorithm)
            for seed in seeds:
                config = replace(base, seed=seed, profile=profile,
                                 learner=replace(base.learner,
                                                 algorithm=algorithm))
                try:
                    config.validate()
                except (ConfigError, ValueError) as exc:
                    return _fail(str(exc), 1)
                try:
                    summary = train(config)
                except OSError as exc:
                    return _fail(f"run {run_file_stem(config)} failed: {exc}", 2)
                print(f"finished {summary.metrics_path} "
                      f"({summary.duration_s:.1f}s)", file=sys.stderr)
    return 0


def cmd_plot(args) -> int:
    if args.metric not in METRIC_NAMES:
        return _fail(f"unknown metric {args.metric!r}; choose from "
                     f"{', '.join(METRIC_NAMES)}", 1)
    in_dir = Path(args.in_dir)
    if not in_dir.is_dir():
        return _fail(f"not a directory: {args.in_dir}", 1)
    groups: dict[str, dict[str, dict[int, list]]] = {}
    for file in sorted(in_dir.iterdir()):
        match = _METRICS_FILE_RE.fullmatch(file.name)
        if not match:
            continue
        try:
            records = read_csv(str(file))
        except ValueError as exc:
            return _fail(str(exc), 1)
        groups.setdefault(match["alg"], {}).setdefault(
            match["personality"], {})[int(match["seed"])] = records
    if not groups:
        return _fail(f"no metrics CSV files found in {args.in_dir}", 1)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    for algorithm, by_personality in sorted(groups.items()):
        series = {personality: _mean_over_seeds(by_seed)
                  for personality, by_seed in by_personality.items()}
        path = out.parent / f"{out.stem}_{algorithm}{out.suffix or '.svg'}"
        try:
            render_chart(series, args.metric, str(path), title=algorithm,
                         smooth=args.smooth)
        except OSError as exc:
            return _fail(f"could not write chart: {exc}", 2)
        print(f"wrote {path}", file=sys.stderr)
    return 0


def _mean_over_seeds(by_seed: dict[int, list]) -> list:
    """Average each metric at the steps every seed reported."""
    from .metrics import MetricsRecord

    common = None
    for records in by_seed.values():
        steps = {r.step for r in records}
        common = steps if common is None else common & steps
    merged = []
    for step in sorted(common or ()):
        rows = [next(r for r in records if r.step == step)
                for records in by_seed.values()]
        merged.append(MetricsRecord(
            step=step,
            battle_won_mean=sum(r.battle_won_mean for r in rows) / len(rows),
            dead_allies_mean=sum(r.dead_allies_mean for r in rows) / len(rows),
            dead_enemies_mean=sum(r.dead_enemies_mean for r in rows) / len(rows),
            mean_innate_return=sum(r.mean_innate_return for r in rows) / len(rows),
            n_episodes=sum(r.n_episodes for r in rows),
        ))
    return merged


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ivmarl",
        description="Personality-driven cooperative battle experiments "
                    "(algorithms: iql, qmix, qtran -- the qtran variant is a "
                    "simplified base implementation)")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="run one training experiment")
    p_train.add_argument("--config", required=True)
    p_train.add_argument("--seed", type=int, default=None,
                         help="override the config seed")
    p_train.add_argument("--out", default=None,
                         help="override the output directory")
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint greedily")
    p_eval.add_argument("--config", required=True)
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--episodes", type=int, default=32)
    p_eval.add_argument("--seed", type=int, default=None)
    p_eval.add_argument("--trace", default=None,
                        help="write a step-by-step JSON-lines trace here")
    p_eval.set_defaults(func=cmd_eval)

    p_sweep = sub.add_parser(
        "sweep", help="train every personality/algorithm/seed combination")
    p_sweep.add_argument("--config", required=True)
    p_sweep.add_argument("--personalities", default=",".join(PERSONALITIES))
    p_sweep.add_argument("--algorithms", default=",".join(ALGORITHMS))
    p_sweep.add_argument("--seeds", default="0")
    p_sweep.add_argument("--out", default=None)
    p_sweep.set_defaults(func=cmd_sweep)

    p_plot = sub.add_parser(
        "plot", help="chart one metric per algorithm from sweep CSVs")
    p_plot.add_argument("--in", dest="in_dir", required=True)
    p_plot.add_argument("--metric", required=True)
    p_plot.add_argument("--out", required=True,
                        help="output path; the algorithm name is appended "
                             "to the stem, e.g. plots/bw.svg -> "
                             "plots/bw_qmix.svg")
    p_plot.add_argument("--smooth", action="store_true",
                        help="trailing moving average (window 32) at render "
                             "time")
    p_plot.set_defaults(func=cmd_plot)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        return _fail(str(exc), 1)
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        return _fail(f"unexpected failure: {exc}", 2)


if __name__ == "__main__":
    sys.exit(main())
