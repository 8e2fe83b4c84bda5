"""Command-line entry point: ``hierrefine run | compare | plan``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .experiment import ARMS, ConfigError, build, compare, format_plan, load_config, run_arm, start_symbol, summary_csv
from .environment import MountainCar
from .knowledge import KnowledgeBaseError
from .policy import extract_plan, load_params

log = logging.getLogger("hierrefine")


def _cmd_run(args) -> int:
    cfg = load_config(args.config, arm=args.arm, master_seed=args.seed, output_dir=args.out)
    log.info("running %s (seed %d) for %d epochs -> %s", cfg.arm, cfg.master_seed, cfg.epochs, cfg.output_dir)
    out = run_arm(cfg, dump_traces=args.dump_traces)
    print(out)
    return 0


def _cmd_compare(args) -> int:
    rows = compare(args.run_dirs, window=args.window)
    sys.stdout.write(summary_csv(rows))
    return 0


def _cmd_plan(args) -> int:
    cfg = load_config(args.config)
    kb, _, params, _ = build(cfg)
    if args.params:
        params = load_params(Path(args.params).read_text())
    start = start_symbol(params, MountainCar(cfg.env_params()))
    sys.stdout.write(format_plan(extract_plan(start, kb.goal, params, cfg.plan_max_len)))
    return 0


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hierrefine", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="train one experiment arm")
    run.add_argument("--config", required=True)
    run.add_argument("--arm", choices=ARMS)
    run.add_argument("--seed", type=int)
    run.add_argument("--out")
    run.add_argument("--dump-traces", action="store_true", help="write traces.tsv")
    run.set_defaults(func=_cmd_run)

    cmp_ = sub.add_parser("compare", help="summarize finished runs as CSV")
    cmp_.add_argument("run_dirs", nargs="+")
    cmp_.add_argument("--window", type=int, default=50, help="trailing epochs averaged per run")
    cmp_.set_defaults(func=_cmd_compare)

    plan = sub.add_parser("plan", help="print the greedy high-level plan")
    plan.add_argument("--config", required=True)
    plan.add_argument("--params", help="parameter file written by a run (default: initial parameters)")
    plan.set_defaults(func=_cmd_plan)
    return parser


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (ConfigError, KnowledgeBaseError, OSError, ValueError) as e:
        print(f"hierrefine: error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
