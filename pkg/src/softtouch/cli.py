"""Command-line entry point.

Subcommands mirror the experiment set: ``collect``, ``train``, ``eval``,
``exp1``, ``exp3a``, ``exp3b``.  Shared flags: ``--config PATH`` (JSON,
sections per module), ``--seed N``, ``--out DIR`` (default from the
SOFTTOUCH_OUT environment variable, else ./runs) and ``--profile
{desk,paper}``.  Exit status is non-zero when a run's built-in checks
fail or an upstream artifact is missing.
"""

from __future__ import annotations

import argparse
import sys

from . import experiments


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", default=None, help="JSON config file")
    parser.add_argument("--seed", type=int, default=0, help="master random seed")
    parser.add_argument("--out", default=None,
                        help="output root (default $SOFTTOUCH_OUT or ./runs)")
    parser.add_argument("--profile", choices=("desk", "paper"), default="desk",
                        help="hyperparameter profile")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="softtouch",
        description="Simulated tactile fingertip and touch-driven grasp control",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, text in (
        ("collect", "synthesize the labelled contact dataset"),
        ("train", "train the pose regressor on the collected dataset"),
        ("eval", "report held-out pose errors"),
        ("exp1", "deformation-controlled grasp closure on each object"),
        ("exp3a", "closure then open-loop motor ramp with pose estimates"),
        ("exp3b", "closure then depth-estimate set-point control"),
    ):
        p = sub.add_parser(name, help=text)
        _add_common(p)
        if name == "eval":
            p.add_argument("--oracle", action="store_true",
                           help="feed labels back as predictions (zero-MAE sanity mode)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = experiments.resolve_config(args.config, profile=args.profile,
                                            seed=args.seed)
        if args.command == "collect":
            target = experiments.collect_stage(config, args.out)
            print(f"dataset written to {target}")
            return 0
        if args.command == "train":
            target = experiments.train_stage(config, args.out)
            print(f"model written to {target}")
            return 0
        if args.command == "eval":
            report = experiments.eval_stage(config, args.out, oracle=args.oracle)
            print(report.as_table())
            return 0
        if args.command == "exp1":
            summary = experiments.exp1(config, args.out)
            for name, verdict in sorted(summary["objects"].items()):
                state = "converged" if verdict["converged"] else "NOT CONVERGED"
                print(f"{name:15s} {state}  settle_cycle={verdict['settle_cycle']} "
                      f"final_e={verdict['final_e']:.3f} final_u={verdict['final_u']:.0f}")
            return 0 if summary["all_converged"] else 1
        if args.command == "exp3a":
            summary = experiments.exp3a(config, args.out)
            print(f"spearman(|de|, depth) = {summary['spearman_abs_de_vs_depth']:.3f}  "
                  f"z-hat R^2 = {summary['z_hat_r_squared']:.3f}  "
                  f"gate consistent = {summary['gate_consistent']}")
            return 0 if summary["passed"] else 1
        if args.command == "exp3b":
            summary = experiments.exp3b(config, args.out)
            for p in summary["plateaus"]:
                print(f"r_z={p['setpoint_z']:.1f} mm  z_hat={p['z_hat_mean']:.3f} mm  "
                      f"|err|={p['abs_error']:.3f} mm  u={p['u_mean']:.0f}")
            return 0 if summary["passed"] else 1
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 1


if __name__ == "__main__":
    sys.exit(main())
