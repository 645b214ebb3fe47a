"""Command-line entry point: train, eval, robustness, params."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict

import tomli_w

from .config import ConfigError, ExperimentConfig, load_config
from .dynamics import QuadParams
from .harness import evaluate_fixed, evaluate_path, robustness_sweep, train


def _cmd_train(args) -> int:
    config = load_config(args.config) if args.config else ExperimentConfig()
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.out is not None:
        overrides["output_dir"] = args.out
    if args.steps is not None:
        overrides["total_env_steps"] = args.steps
    if overrides:
        config = config.replace_train(**overrides)
    result = train(config, resume_from=args.resume)
    print(f"final checkpoint: {result.final_checkpoint}")
    print(f"learning curve:   {result.learning_curve}")
    return 0


def _cmd_eval(args) -> int:
    config = load_config(args.config) if args.config else None
    if args.kind == "fixed":
        _, summary = evaluate_fixed(args.checkpoint, args.episodes, args.steps, args.out, config=config)
        print(json.dumps(summary, indent=2))
        return 0
    rec = evaluate_path(args.checkpoint, args.kind, args.speed, args.out, config=config, episode_len=args.steps)
    d = rec.distances()
    info = dict(rec.summary(), mean_tracking_error=float(d.mean()), final_300_tracking_error=float(d[-300:].mean()))
    print(json.dumps(info, indent=2))
    return 0


def _cmd_robustness(args) -> int:
    config = load_config(args.config) if args.config else None
    report, _ = robustness_sweep(args.checkpoint, out_dir=args.out, config=config)
    print(json.dumps(asdict(report), indent=2))
    return 0


def _cmd_params(args) -> int:
    if args.all:
        sys.stdout.write(ExperimentConfig().to_toml())
    else:
        sys.stdout.write(tomli_w.dumps({"quad": QuadParams().to_dict()}))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="quadsac", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log training progress")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a SAC agent")
    p.add_argument("--config", help="TOML experiment config")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory")
    p.add_argument("--steps", type=int, help="override train.total_env_steps")
    p.add_argument("--resume", help="checkpoint to continue from (needs train.save_buffer)")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="evaluate the deterministic policy")
    p.add_argument("kind", choices=("fixed", "line", "square", "sinusoid"))
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--speed", type=float, default=0.2)
    p.add_argument("--episodes", type=int, default=5, help="episodes for the fixed-target suite")
    p.add_argument("--steps", type=int, help="episode length (default: env.max_steps_eval)")
    p.add_argument("--out", help="directory for CSV output")
    p.add_argument("--config", help="override the config stored in the checkpoint")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("robustness", help="216-pose extreme-initialisation sweep")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", help="directory for CSV output")
    p.add_argument("--config", help="override the config stored in the checkpoint")
    p.set_defaults(func=_cmd_robustness)

    p = sub.add_parser("params", help="show simulator parameters")
    p.add_argument("action", choices=("show",))
    p.add_argument("--all", action="store_true", help="print every config section")
    p.set_defaults(func=_cmd_params)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(asctime)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
