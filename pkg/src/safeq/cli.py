"""Command line entry point: ``safeq {train,eval,plot,make-dataset,oracle-check}``."""
from __future__ import annotations

import argparse
import sys
from pathlib import Path


from . import harness, plots
from .behavior import PidController, collect_cartpole_dataset, collect_frozenlake_dataset
from .core import STREAM_DATASET, STREAM_EVAL, make_rng
from .runner import ConfigError, ExperimentConfig


def _train(args):
    cfg = ExperimentConfig.from_json(args.config)
    out = args.out or cfg.out_dir or "runs/" + Path(args.config).stem
    harness.train(cfg, out, args.seed_offset, resume=not args.no_resume, log=print)
    print(f"wrote results to {out}")
    return 0


def _eval(args):
    from .oracle import mc_policy_return

    env, act, _, gamma = harness.policy_from_checkpoint(args.checkpoint)
    disc, undisc = mc_policy_return(env, act, args.episodes, gamma, make_rng(args.seed, STREAM_EVAL))
    print(f"mean return {undisc:.6g}  mean discounted return {disc:.6g}  ({args.episodes} episodes)")
    return 0


def _plot(args):
    records = [r for p in args.input for r in harness.read_records(p)]
    if not records:
        raise ConfigError("no records in the input CSVs")
    if args.kind == "curve":
        svg = plots.curve_svg(records, args.metric or "return")
    elif args.kind == "calibration":
        svg = plots.calibration_svg(records)
    else:
        svg = plots.binned_svg(records, args.metric or "max_angle_deg", args.bins)
    Path(args.out).write_text(svg)
    print(f"wrote {args.out}")
    return 0


def _make_dataset(args):
    rng = make_rng(args.seed, STREAM_DATASET)
    if args.env == "frozenlake":
        data = collect_frozenlake_dataset(args.transitions, rng, epsilon=args.epsilon)
    else:
        data = collect_cartpole_dataset(args.episodes, rng, args.action, PidController(), args.dither,
                                        epsilon=args.epsilon)
    data.save(args.out)
    print(f"wrote {len(data)} transitions to {args.out}")
    return 0


def _oracle_check(args):
    from .oracle import run_suite

    return 0 if run_suite(args.seed) else 1


def build_parser():
    p = argparse.ArgumentParser(prog="safeq", description="Safe-support Q-learning experiments")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train all seeds of a config and write CSVs and checkpoints")
    t.add_argument("--config", required=True)
    t.add_argument("--seed-offset", type=int, default=0)
    t.add_argument("--out", default=None)
    t.add_argument("--no-resume", action="store_true", help="retrain seeds that already finished")
    t.set_defaults(func=_train)

    e = sub.add_parser("eval", help="roll out the policy stored in a final checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--episodes", type=int, default=20)
    e.add_argument("--seed", type=int, default=0)
    e.set_defaults(func=_eval)

    pl = sub.add_parser("plot", help="render an SVG from metric CSVs")
    pl.add_argument("--input", nargs="+", required=True)
    pl.add_argument("--kind", choices=("curve", "calibration", "binned"), required=True)
    pl.add_argument("--out", required=True)
    pl.add_argument("--metric", default=None)
    pl.add_argument("--bins", type=int, default=10)
    pl.set_defaults(func=_plot)

    d = sub.add_parser("make-dataset", help="build a safe dataset from behavior-policy rollouts")
    d.add_argument("--env", choices=("cartpole", "frozenlake"), default="cartpole")
    d.add_argument("--action", choices=("continuous", "discrete"), default="continuous")
    d.add_argument("--episodes", type=int, default=200)
    d.add_argument("--transitions", type=int, default=5000, help="FrozenLake dataset size")
    d.add_argument("--dither", type=float, default=0.05)
    d.add_argument("--epsilon", type=float, default=0.1)
    d.add_argument("--seed", type=int, default=0)
    d.add_argument("--out", required=True)
    d.set_defaults(func=_make_dataset)

    o = sub.add_parser("oracle-check", help="run the exact-oracle verification suite")
    o.add_argument("--seed", type=int, default=0)
    o.set_defaults(func=_oracle_check)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ValueError, FileNotFoundError) as exc:
        print(f"safeq: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
