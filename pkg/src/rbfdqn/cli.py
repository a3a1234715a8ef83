"""Command-line entry point: ``rbfdqn {train,eval,ablate,gradcheck}``.

Exit codes: 0 success, 1 failed check, 2 bad configuration / input files,
3 numerical failure during training.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import bench, gradcheck, rbf_q
from .agent import VARIANTS
from .config import RunConfig, load_config
from .errors import CheckpointError, ConfigError, ShapeError

EXIT_OK, EXIT_CHECK_FAILED, EXIT_CONFIG, EXIT_NUMERICAL = 0, 1, 2, 3


def _add_config_flags(p: argparse.ArgumentParser, skip=()) -> None:
    p.add_argument("--config", help="flat 'key = value' file; flags override it")
    group = p.add_argument_group("run configuration (every key of the config file)")
    for key in RunConfig.keys():
        if key in skip:
            continue
        default = getattr(RunConfig, key)
        group.add_argument(f"--{key.replace('_', '-')}", dest=key, default=argparse.SUPPRESS,
                           metavar=type(default).__name__.upper(), help=f"default: {default}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rbfdqn", allow_abbrev=False,
                                     description="RBF-DQN with HER/PER on goal-conditioned sparse-reward tasks")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    train = sub.add_parser("train", allow_abbrev=False, help="train one (task, variant, seed)")
    _add_config_flags(train)

    ev = sub.add_parser("eval", allow_abbrev=False, help="greedy evaluation of a checkpoint")
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--eval-csv", help="where to append the result row (default: next to the checkpoint)")
    _add_config_flags(ev)

    ab = sub.add_parser("ablate", allow_abbrev=False, help="vanilla/her/per/herper x seeds")
    ab.add_argument("--seeds", default="0,1,2", help="comma-separated seeds")
    ab.add_argument("--variants", default=",".join(VARIANTS))
    ab.add_argument("--workers", type=int, default=1)
    _add_config_flags(ab, skip=("seed", "variant"))

    gc = sub.add_parser("gradcheck", allow_abbrev=False, help="finite-difference gradient suites")
    gc.add_argument("--seed", type=int, default=0)
    gc.add_argument("--cases", type=int, default=20)
    return parser


def _overrides(args: argparse.Namespace) -> dict:
    return {k: v for k, v in vars(args).items() if k in RunConfig.keys()}


def cmd_train(args) -> int:
    cfg = load_config(args.config, _overrides(args))
    try:
        result = bench.run_training(cfg)
    except bench.RunFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    first = result.episodes_to_threshold()
    print(f"wrote {result.output_dir / 'run.csv'}; episodes to rolling success >= {bench.SUCCESS_THRESHOLD}: "
          f"{'never' if first is None else first}; final greedy success rate {result.final_eval:.3f}")
    return EXIT_OK


def cmd_eval(args) -> int:
    overrides = _overrides(args)
    try:
        _, meta = rbf_q.load(args.checkpoint)
    except (CheckpointError, OSError) as exc:
        print(f"error: cannot read checkpoint: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    for key in ("task", "seed"):
        if key in meta and key not in overrides and not args.config:
            overrides[key] = meta[key]
    cfg = load_config(args.config, overrides)
    episodes = cfg.eval_episodes
    try:
        rate = bench.evaluate_checkpoint(args.checkpoint, cfg, episodes)
    except ShapeError as exc:
        print(f"error: checkpoint/task mismatch: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    csv_path = Path(args.eval_csv) if args.eval_csv else Path(args.checkpoint).parent / "eval.csv"
    bench.append_eval_row(csv_path, [args.checkpoint, cfg.task, cfg.seed, episodes, bench.fmt(rate)])
    print(f"success rate {rate:.4f} over {episodes} episodes ({cfg.task}, seed {cfg.seed})")
    return EXIT_OK


def cmd_ablate(args) -> int:
    try:
        seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
    except ValueError:
        raise ConfigError(f"--seeds must be comma-separated integers, got {args.seeds!r}") from None
    variants = [v.strip() for v in args.variants.split(",") if v.strip()]
    if not seeds:
        raise ConfigError("need at least one seed")
    for v in variants:
        if v not in VARIANTS:
            raise ConfigError(f"unknown variant {v!r}; expected {VARIANTS}")
    base = load_config(args.config, _overrides(args))
    result = bench.run_ablation(base, seeds, base.output_dir, variants, args.workers)
    sys.stdout.write(result.ranking_path.read_text())
    print(f"wrote {result.summary_path}")
    return EXIT_NUMERICAL if result.any_variant_failed_entirely else EXIT_OK


def cmd_gradcheck(args) -> int:
    results = gradcheck.run_all(args.seed, args.cases)
    for r in results:
        print(r.line())
    return EXIT_OK if all(r.passed for r in results) else EXIT_CHECK_FAILED


COMMANDS = {"train": cmd_train, "eval": cmd_eval, "ablate": cmd_ablate, "gradcheck": cmd_gradcheck}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
