"""Command line entry point: ``slass run`` and ``slass compare``."""

from __future__ import annotations

import argparse
import logging
import os
import sys

from .configfile import ConfigError, load_config
from .core import published_config
from .harness import compare_policies, default_workers, run_experiment
from .policies import PolicyKind

POLICY_CHOICES = [p.value for p in PolicyKind]


def _load(args):
    if args.config:
        cfg, extras = load_config(args.config)
    else:
        cfg, extras = published_config(args.robots), {}
    changes = {}
    if getattr(args, "trials", None) is not None:
        changes["num_trials"] = args.trials
    if getattr(args, "seed", None) is not None:
        changes["seed"] = args.seed
    if changes:
        cfg = cfg.with_(**changes)
    return cfg, extras


def _workers(args) -> int:
    if os.environ.get("SLASS_THREADS"):
        return default_workers()
    return args.threads or default_workers()


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="slass",
        description="Multi-robot simultaneous localization and source seeking simulations.",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="key = value config file (defaults: published setup)")
        p.add_argument("--robots", type=int, default=2, choices=(1, 2, 3),
                       help="number of robots when no config file is given")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--threads", type=int, default=None,
                       help="worker processes (default: all cores; SLASS_THREADS overrides)")
        p.add_argument("--dump-trajectories", action="store_true",
                       help="write one per-cycle trajectory CSV per trial")

    run = sub.add_parser("run", help="run one policy over many trials")
    common(run)
    run.add_argument("--policy", choices=POLICY_CHOICES, default=None)
    run.add_argument("--trials", type=int, default=None)
    run.add_argument("--seed", type=int, default=None)

    cmp_ = sub.add_parser("compare", help="run several policies on shared trial streams")
    common(cmp_)
    cmp_.add_argument("--policies", default=",".join(POLICY_CHOICES),
                      help="comma-separated policy list")
    cmp_.add_argument("--trials", type=int, default=None)
    cmp_.add_argument("--seed", type=int, default=None)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        cfg, extras = _load(args)
        workers = _workers(args)
        if args.command == "run":
            policy = args.policy or extras.get("policy", "proposed")
            result = run_experiment(cfg, policy, args.out, workers, args.dump_trajectories)
            aborted = [t.trial for t in result.trials if t.termination == "aborted"]
            m = result.metrics
            print(
                f"{result.policy}: final RMSE {m.final_rmse:.3f} m, "
                f"success rate {m.success_rate:.2f}, "
                f"mean final robot-1 distance {m.final_distance:.2f} m"
            )
            if aborted:
                print(f"aborted trials: {aborted}", file=sys.stderr)
                return 2
        else:
            policies = [p.strip() for p in args.policies.split(",") if p.strip()]
            for p in policies:
                PolicyKind(p)
            results = compare_policies(cfg, policies, args.out, workers, args.dump_trajectories)
            for label, r in results.items():
                m = r.metrics
                print(f"{label:>12}: final RMSE {m.final_rmse:8.3f} m  "
                      f"success {m.success_rate:.2f}  final distance {m.final_distance:7.2f} m")
            if any(t.termination == "aborted" for r in results.values() for t in r.trials):
                return 2
    except (ConfigError, ValueError) as exc:
        print(f"slass: error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"slass: I/O error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
