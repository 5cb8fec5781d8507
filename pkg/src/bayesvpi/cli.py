"""Command line entry point: ``bayesvpi run|tune-tbored|dump-mdp``."""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace

from .gridworld import EnvConfig, Maze, MapParseError, load_map
from .harness import ConfigError, ExperimentConfig, aggregate_and_emit, run_experiment, tune_tbored

log = logging.getLogger("bayesvpi")


def _load(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if getattr(args, "out_dir", None):
        cfg = replace(cfg, out_dir=args.out_dir)
    if getattr(args, "runs", None) is not None:
        cfg = replace(cfg, num_runs=args.runs)
    cfg.validate()
    return cfg


def cmd_run(args) -> int:
    cfg = _load(args)
    traces = run_experiment(cfg, progress=lambda name, i: log.info("%s: run %d done", name, i))
    paths = aggregate_and_emit(traces, cfg)
    for path in paths.values():
        print(path)
    return 0


def cmd_tune(args) -> int:
    cfg = _load(args)
    candidates = [int(c) for c in args.candidates.split(",")] if args.candidates else None
    print(tune_tbored(cfg, candidates=candidates, agent=args.agent))
    return 0


def cmd_dump(args) -> int:
    cfg = EnvConfig(success_prob=args.success_prob, discount=args.discount)
    mdp = Maze(load_map(args.map), cfg).mdp
    if args.output in (None, "-"):
        mdp.dump(sys.stdout)
    else:
        with open(args.output, "w", encoding="utf-8") as fh:
            mdp.dump(fh)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bayesvpi", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run every agent in a config and write CSV outputs")
    run.add_argument("config")
    run.add_argument("--seed", type=int)
    run.add_argument("--out-dir")
    run.add_argument("--runs", type=int, help="override num_runs")
    run.set_defaults(func=cmd_run)

    tune = sub.add_parser("tune-tbored", help="grid-search the baseline's T_bored")
    tune.add_argument("config")
    tune.add_argument("--seed", type=int)
    tune.add_argument("--runs", type=int)
    tune.add_argument("--agent", help="name of the tbored agent (default: first one)")
    tune.add_argument("--candidates", help="comma-separated values, e.g. 1,2,4")
    tune.set_defaults(func=cmd_tune)

    dump = sub.add_parser("dump-mdp", help="compile a map and print the MDP debug format")
    dump.add_argument("map", help="shipped layout name or map file")
    dump.add_argument("-o", "--output")
    dump.add_argument("--success-prob", type=float, default=EnvConfig.success_prob)
    dump.add_argument("--discount", type=float, default=EnvConfig.discount)
    dump.set_defaults(func=cmd_dump)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, MapParseError, ValueError, OSError) as exc:
        print(f"bayesvpi: error: {exc}", file=sys.stderr)
        return 2
