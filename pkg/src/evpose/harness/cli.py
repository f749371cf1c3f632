"""Command line entry point: ``evpose gen|frames|train|eval|bench|matrix``."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from threadpoolctl import threadpool_limits

from .. import nn
from ..errors import ConfigError, EvposeError
from . import bench, dataset, evaluation, matrix, training
from .config import ExperimentConfig

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_DIVERGED = 0, 2, 3, 4
COMMANDS = ("gen", "frames", "train", "eval", "bench", "matrix")


def _parser():
    p = argparse.ArgumentParser(prog="evpose", description="Event-based keypoint pose estimation experiments.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", help="JSON experiment config (defaults are used for missing fields)")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--out", default="runs", help="output directory (default: runs)")
    p.add_argument("--weights", help="eval: NNW1 weights to use instead of the cached model")
    p.add_argument("--quiet", action="store_true")
    return p


def load_config(path, seed=None):
    cfg = ExperimentConfig.load(path) if path else ExperimentConfig()
    return cfg if seed is None else cfg.replace(seed=seed)


def run(command, config, out, weights=None, log=print):
    """Execute one command; returns a JSON-serialisable summary."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    config.save(out / "config.json")
    if command == "gen":
        m = dataset.generate(config, out, log)
        log(f"events: {m['events']}  windows: {m['windows']}")
        return m
    if command == "frames":
        info = dataset.build_frames(config, out, log=log)
        return {k: v for k, v in info.items() if k != "per_window_events"}
    if command == "train":
        if config.regime == "float":
            _, summary = training.train(config, out, log)
        else:
            parent = training.train_or_load(config.replace(regime="float"), out, log)
            _, summary = training.train(config, out, log, initial=parent)
        return {k: v for k, v in summary.items() if k != "epochs"}
    if command == "eval":
        net = nn.load_weights(weights) if weights else None
        return evaluation.run_eval(config, out, net, log).to_dict()
    if command == "bench":
        return bench.run_bench(config, out, log)
    if command == "matrix":
        return matrix.run_matrix(config, out, log).to_dict()
    raise ConfigError(f"unknown command {command!r}")


def main(argv=None):
    args = _parser().parse_args(argv)
    log = (lambda *a, **k: None) if args.quiet else print
    try:
        config = load_config(args.config, args.seed)
        with threadpool_limits(limits=1):
            run(args.command, config, args.out, args.weights, log)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except training.TrainingDivergence as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DIVERGED
    except (EvposeError, OSError, json.JSONDecodeError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
