"""Command-line entry point.

Exit codes: 0 success, 1 validation error, 2 acceptance failure.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .agent_env import ValidationError
from .harness import (
    FIXTURE_KINDS,
    SEARCH_MODES,
    ExperimentConfig,
    TrialError,
    generate_fixture,
    run_experiment,
    tomllib,
    write_fixture,
)
from .quantum_core import ResourceError

EXIT_OK, EXIT_VALIDATION, EXIT_ACCEPTANCE = 0, 1, 2
DEFAULT_OUT_DIR = "qerl-out"

# dest names that map one-to-one onto ExperimentConfig fields
_CONFIG_KEYS = ("n", "M", "k", "epsilon", "trials", "seed", "T_eval", "fixture", "mode", "threshold", "budget",
                "p_min", "bits", "schedule", "restart_cap", "out_dir", "workers")


def _global_flags(p: argparse.ArgumentParser) -> None:
    # SUPPRESS keeps unset flags out of the namespace, so a flag given before
    # the subcommand is not overwritten by the subcommand's default
    s = argparse.SUPPRESS
    p.add_argument("--seed", type=int, default=s, help="master seed (default 0)")
    p.add_argument("--trials", type=int, default=s, help="number of independent trials")
    p.add_argument("--out-dir", dest="out_dir", default=s, help=f"output directory (default {DEFAULT_OUT_DIR})")
    p.add_argument("--config", default=s, help="TOML file with ExperimentConfig fields; flags override it")
    p.add_argument("--workers", type=int, default=s, help="worker processes for trials (default 1)")


def _env_flags(p: argparse.ArgumentParser) -> None:
    s = argparse.SUPPRESS
    p.add_argument("--n", type=int, default=s, help="action alphabet size")
    p.add_argument("--M", type=int, default=s, help="epoch length")
    p.add_argument("--fixture", default=s, help="environment fixture JSON (overrides --n/--M)")


def build_parser() -> argparse.ArgumentParser:
    s = argparse.SUPPRESS
    parser = argparse.ArgumentParser(prog="qerl", description="Quantum-enhanced reinforcement learning experiments")
    _global_flags(parser)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fixture", help="generate an environment fixture")
    _global_flags(p)
    p.add_argument("--kind", choices=FIXTURE_KINDS, default="single-win")
    p.add_argument("--n", type=int, default=2)
    p.add_argument("--M", type=int, default=2)
    p.add_argument("--winner", type=int, help="winning sequence index (single-win)")
    p.add_argument("--rewards", help="comma-separated total rewards per sequence")
    p.add_argument("--lambda-max", dest="lambda_max", type=int)
    p.add_argument("--reward-prob", dest="reward_prob", help="comma-separated reward probabilities (stochastic)")
    p.add_argument("--good-count", dest="good_count", type=int)
    p.add_argument("--p-high", dest="p_high", type=float)
    p.add_argument("--p-low", dest="p_low", type=float)
    p.add_argument("--p-min", dest="p_min", type=float, help="threshold whose grid gap is validated")
    p.add_argument("--bits", type=int)
    p.add_argument("--output", "-o", help="fixture path (default <out-dir>/fixture_<kind>.json)")

    p = sub.add_parser("search", help="Grover, threshold or maximum-reward search")
    _global_flags(p)
    _env_flags(p)
    p.add_argument("--mode", choices=SEARCH_MODES, default=s)
    p.add_argument("--threshold", type=int, default=s)
    p.add_argument("--budget", type=int, default=s)

    p = sub.add_parser("learn-compare", help="quantum-enhanced agent against its classical baseline")
    _global_flags(p)
    _env_flags(p)
    p.add_argument("--k", type=float, default=s, help="exploration budget factor (default M)")
    p.add_argument("--epsilon", type=float, default=s)
    p.add_argument("--T-eval", dest="T_eval", type=int, default=s, help="evaluation steps (multiple of M)")
    p.add_argument("--restart-cap", dest="restart_cap", type=int, default=s)

    p = sub.add_parser("stochastic-search", help="amplification above a reward-probability threshold")
    _global_flags(p)
    _env_flags(p)
    p.add_argument("--p-min", dest="p_min", type=float, default=s)
    p.add_argument("--bits", type=int, default=s)
    p.add_argument("--budget", type=int, default=s)

    p = sub.add_parser("structural-pair", help="sample a rewarded (actions, percepts) pair")
    _global_flags(p)
    _env_flags(p)
    p.add_argument("--schedule", choices=("exact", "randomized"), default=s)

    p = sub.add_parser("lemma-verify", help="numerical checks of the tester lemmas")
    _global_flags(p)

    p = sub.add_parser("accept", help="run the acceptance suite")
    _global_flags(p)
    p.add_argument("--only", type=int, nargs="+", help="criterion numbers to run")
    p.add_argument("--no-repro", action="store_true", help="skip the reproducibility rerun (criterion 10)")
    return parser


def _load_toml(path: str) -> dict:
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except (OSError, tomllib.TOMLDecodeError) as exc:
        raise ValidationError(f"cannot read config {path}: {exc}") from None


def config_from_args(args: argparse.Namespace) -> ExperimentConfig:
    data = _load_toml(args.config) if getattr(args, "config", None) else {}
    data.pop("kind", None)
    for key in _CONFIG_KEYS:
        if hasattr(args, key):
            data[key] = getattr(args, key)
    data["kind"] = args.command
    data.setdefault("out_dir", DEFAULT_OUT_DIR)
    return ExperimentConfig.from_dict(data)


def _csv_list(text: str | None, cast):
    return None if text is None else [cast(x) for x in text.split(",") if x.strip()]


def cmd_fixture(args: argparse.Namespace) -> int:
    params = _load_toml(args.config) if getattr(args, "config", None) else {}
    params.update(kind=args.kind, n=args.n, M=args.M)
    extra = {"winner": args.winner, "rewards": _csv_list(args.rewards, int), "lambda_max": args.lambda_max,
             "reward_prob": _csv_list(args.reward_prob, float), "good_count": args.good_count,
             "p_high": args.p_high, "p_low": args.p_low, "p_min": args.p_min, "bits": args.bits}
    params.update({k: v for k, v in extra.items() if v is not None})
    seed = getattr(args, "seed", params.pop("seed", 0))
    data = generate_fixture(params, np.random.default_rng(seed))
    out = args.output or str(Path(getattr(args, "out_dir", DEFAULT_OUT_DIR)) / f"fixture_{args.kind}.json")
    path = write_fixture(data, out)
    print(json.dumps({"fixture": str(path), "kind": data["kind"], "metadata": data["metadata"]}, sort_keys=True))
    return EXIT_OK


def cmd_experiment(args: argparse.Namespace) -> int:
    config = config_from_args(args)
    report = run_experiment(config)
    summary = {"kind": config.kind, "trials": len({r["trial"] for r in report.records}),
               "out_dir": config.out_dir,
               "means": {k: v["mean"] for k, v in sorted(report.aggregates.items())}}
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


def cmd_accept(args: argparse.Namespace) -> int:
    from .acceptance import run_acceptance

    seed = getattr(args, "seed", 0)
    report = run_acceptance(seed, only=args.only, reproducibility=not args.no_repro, echo=print)
    report.write(getattr(args, "out_dir", DEFAULT_OUT_DIR))
    print("acceptance " + ("passed" if report.passed else "FAILED"))
    return EXIT_OK if report.passed else EXIT_ACCEPTANCE


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "fixture":
            return cmd_fixture(args)
        if args.command == "accept":
            return cmd_accept(args)
        return cmd_experiment(args)
    except (ValidationError, ResourceError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except TrialError as exc:
        print(f"error: {exc}", file=sys.stderr)
        if isinstance(exc.__cause__, (ValidationError, ResourceError)):
            return EXIT_VALIDATION
        raise


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
