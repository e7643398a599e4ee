"""Command-line entry point.

    reps run <config.ini> [--out DIR] [--jobs K] [--plots] [--seed S]
    reps ablate <config.ini> --steps 1,2,5,10 --nfe 1000 [--out DIR] ...

Exit code 0 on a fully successful sweep, 2 when some runs recorded errors.
The output directory can also be set through the REPS_OUT environment variable.
"""
from __future__ import annotations

import argparse
import sys

from .harness import (
    ablate_ode_steps,
    emit_ablation,
    emit_outputs,
    load_config,
    resolve_out_dir,
    run_experiment,
)


def _add_common(sub):
    sub.add_argument("config", help="path to an INI experiment config")
    sub.add_argument("--out", default=None, help="output directory")
    sub.add_argument("--jobs", type=int, default=1, help="concurrent runs")
    sub.add_argument("--plots", action="store_true", help="also render figures")
    sub.add_argument("--seed", type=int, default=None,
                     help="override the config master seed")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="reps",
                                     description="restart posterior sampling experiments")
    subs = parser.add_subparsers(dest="command", required=True)
    run = subs.add_parser("run", help="run a (method x budget x seed) sweep")
    _add_common(run)
    abl = subs.add_parser("ablate", help="sweep ODE steps per restart leg")
    _add_common(abl)
    abl.add_argument("--steps", required=True,
                     help="comma-separated steps-per-leg values")
    abl.add_argument("--nfe", type=int, required=True, help="fixed total budget")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.master_seed = args.seed
        cfg.config_hash = ""
        cfg.__post_init__()
    out_dir = resolve_out_dir(cfg.out, args.out)

    if args.command == "run":
        records = run_experiment(cfg, jobs=args.jobs)
        manifest = emit_outputs(records, out_dir, plots_enabled=args.plots)
        failed = sum(1 for r in records if r.error)
    else:
        steps = [int(s) for s in args.steps.split(",") if s.strip()]
        rows = ablate_ode_steps(cfg, steps, args.nfe, jobs=args.jobs)
        manifest = emit_ablation(rows, out_dir, plots_enabled=args.plots)
        failed = sum(1 for _, r in rows if r.error)

    for path in manifest:
        print(path)
    if failed:
        print(f"{failed} run(s) recorded errors", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
