"""Command-line entry point.

Every flag has a config-file key of the same name (dashes become
underscores); flags override the file. Exit codes: 0 success, 1 bad
configuration, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import harness, randomizers
from .environments import hard_tree_mdp, ldp_lower_bound
from .mdp import Trajectory

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2

RUN_KEYS = {f.name for f in dataclasses.fields(harness.RunConfig)}
# keys that steer the command rather than a single run
CLI_KEYS = {
    "eps": None,
    "seeds": 20,
    "jobs": 1,
    "out": "results",
    "baseline": True,
    "n_repeats": 1000,
    "env_kind": "random",
    "delta_gap": 0.1,
    "n_trials": 200,
    "coverage_k": 1000,
    "n_pairs": 1000,
}
# keys that do not change results and stay out of the CSV echo
NO_ECHO = {"out", "jobs"}


class ConfigError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _float_list(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a comma-separated list of numbers, got {text!r}")


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="JSON file with default values for any flag")
    p.add_argument("--seed", type=int)
    p.add_argument("--K", type=int)
    p.add_argument("--eps", type=_float_list, help="comma-separated privacy levels")
    p.add_argument("--seeds", type=int, help="number of seeds (sweep uses seed, seed+1, ...)")
    p.add_argument("--algo", choices=("obi", "ucbvi", "psrl"))
    p.add_argument("--mechanism", choices=randomizers.MECHANISMS)
    p.add_argument("--delta", type=float)
    p.add_argument("--alpha", type=float)
    p.add_argument("--delta0", type=float)
    p.add_argument("--S", type=int)
    p.add_argument("--A", type=int)
    p.add_argument("--H", type=int)
    p.add_argument("--env-alpha", type=float)
    p.add_argument("--env-path")
    p.add_argument("--record-stride", type=int)
    p.add_argument("--engine", choices=harness.ENGINES)
    p.add_argument("--out", help="output directory (PRIVRL_OUT overrides)")
    p.add_argument("--jobs", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="privrl", description="Locally private regret minimization in tabular MDPs")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-env", help="write an MDP as JSON")
    _add_common(p)
    p.add_argument("--env-kind", choices=("random", "tree"))
    p.add_argument("--delta-gap", type=float)

    p = sub.add_parser("run", help="one learner, one seed -> runs.csv")
    _add_common(p)

    p = sub.add_parser("sweep", help="epsilon x seed grid -> runs.csv + summary.csv")
    _add_common(p)
    p.add_argument("--baseline", action=argparse.BooleanOptionalAction, help="add UCB-VI runs per seed")

    p = sub.add_parser("audit", help="likelihood-ratio audit and precision-bound coverage")
    _add_common(p)
    p.add_argument("--n-pairs", type=int)
    p.add_argument("--n-trials", type=int)
    p.add_argument("--coverage-k", type=int)

    p = sub.add_parser("dump-stats", help="true vs privatized statistics -> stats.csv")
    _add_common(p)
    p.add_argument("--n-repeats", type=int)

    p = sub.add_parser("lower-bound", help="print the regret lower-bound curve")
    _add_common(p)
    return parser


def resolve(args: argparse.Namespace) -> dict:
    """Merge defaults, the config file and explicit flags (in that order)."""
    merged: dict = {}
    if args.config is not None:
        try:
            data = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}")
        if not isinstance(data, dict):
            raise ConfigError("config file must hold a JSON object")
        for key in data:
            if key not in RUN_KEYS and key not in CLI_KEYS:
                raise ConfigError(f"unknown config key: {key}")
        merged.update(data)
    for key, value in vars(args).items():
        if key in ("command", "config") or value is None:
            continue
        merged[key] = value
    if "PRIVRL_OUT" in os.environ:
        merged["out"] = os.environ["PRIVRL_OUT"]
    for key, default in CLI_KEYS.items():
        merged.setdefault(key, default)
    if merged["eps"] is not None and not isinstance(merged["eps"], list):
        merged["eps"] = [merged["eps"]]
    return merged


def run_config(opts: dict, require_seed: bool) -> harness.RunConfig:
    if require_seed and "seed" not in opts:
        raise ConfigError("--seed is required (no implicit seeding)")
    fields = {k: v for k, v in opts.items() if k in RUN_KEYS}
    if opts["eps"]:
        fields["epsilon"] = opts["eps"][0]
    try:
        cfg = harness.RunConfig(**fields)
        # validate the mechanism calibration before any work starts
        cfg.mechanism_config(cfg.S, cfg.A, cfg.H)
        if cfg.algo == "psrl" and cfg.effective_mechanism not in ("laplace", "identity"):
            raise ValueError("psrl supports the laplace and identity mechanisms only")
        if cfg.algo == "obi" and not cfg.alpha > 1:
            raise ValueError("alpha must exceed 1")
        if not 0 < cfg.delta < 1:
            raise ValueError("delta must lie in (0, 1)")
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc))
    return cfg


def _echo(opts: dict, **extra) -> dict:
    echo = {k: v for k, v in opts.items() if k not in NO_ECHO}
    echo.update(extra)
    return echo


def _out_dir(opts: dict) -> Path:
    out = Path(opts["out"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_gen_env(opts: dict) -> int:
    cfg = run_config(opts, require_seed=False)
    if opts["env_kind"] == "tree":
        try:
            mdp = hard_tree_mdp(cfg.S, cfg.A, cfg.H, opts["delta_gap"])
        except ValueError as exc:
            raise ConfigError(str(exc))
    else:
        mdp = harness.make_env(dataclasses.replace(cfg, env_path=None))
    path = _out_dir(opts) / "env.json"
    mdp.save(path)
    print(path)
    return EXIT_OK


def cmd_run(opts: dict) -> int:
    if opts["eps"] and len(opts["eps"]) != 1:
        raise ConfigError("run takes a single --eps value; use sweep for a grid")
    cfg = run_config(opts, require_seed=True)
    res = harness.run_episode_loop(cfg)
    path = harness.write_runs_csv(_out_dir(opts) / "runs.csv", [res], _echo(opts, **cfg.to_dict()))
    print(f"{path}: final cumulative regret {harness.fmt(res.final_regret)} after {cfg.K} episodes")
    return EXIT_OK


def cmd_sweep(opts: dict) -> int:
    base = run_config(opts, require_seed=True)
    epsilons = opts["eps"] or [base.epsilon]
    seeds = [base.seed + i for i in range(int(opts["seeds"]))]
    if not seeds:
        raise ConfigError("--seeds must be at least 1")
    for e in epsilons:
        run_config({**opts, "eps": [e]}, require_seed=True)
    results = harness.sweep(base, epsilons, seeds, jobs=int(opts["jobs"]), baseline=bool(opts["baseline"]))
    echo = _echo(opts, **base.to_dict(), eps=epsilons)
    out = _out_dir(opts)
    harness.write_runs_csv(out / "runs.csv", results, echo)
    summaries = harness.summarize(results)
    harness.write_summary_csv(out / "summary.csv", summaries, echo)
    for sm in summaries:
        print(f"{sm.algo:6s} {sm.mechanism:9s} eps={sm.epsilon:<6g} mean final regret {sm.mean_cum[-1]:.6g}")
    return EXIT_OK


def _random_trajectory(S, A, H, rng) -> Trajectory:
    return Trajectory(rng.integers(0, S, H), rng.integers(0, A, H), rng.integers(0, 2, H).astype(float))


def cmd_audit(opts: dict) -> int:
    cfg = run_config(opts, require_seed=False)
    mech = cfg.mechanism_config(cfg.S, cfg.A, cfg.H)
    rng = np.random.default_rng(cfg.seed)
    report: dict = {"mechanism": mech.kind, "epsilon": mech.epsilon, "S": cfg.S, "A": cfg.A, "H": cfg.H}
    if mech.kind in ("bernoulli", "laplace", "gaussian", "identity"):
        n_pairs = int(opts["n_pairs"])
        if mech.kind == "bernoulli":
            if cfg.H * cfg.S * cfg.A * (1 + cfg.S) > randomizers.AUDIT_MAX_BITS:
                raise ConfigError(f"exhaustive audit needs H*S*A*(1+S) <= {randomizers.AUDIT_MAX_BITS}")
            # exhaustive enumeration per pair; a few pairs suffice
            n_pairs = min(n_pairs, 50)
        worst = 0.0
        for _ in range(n_pairs):
            x = _random_trajectory(cfg.S, cfg.A, cfg.H, rng)
            x2 = _random_trajectory(cfg.S, cfg.A, cfg.H, rng)
            worst = max(worst, randomizers.audit_ldp_ratio(mech, x, x2, rng))
        report.update(max_log_ratio=worst, n_pairs=n_pairs, within_epsilon=bool(worst <= mech.epsilon + 1e-9))
    mdp = harness.make_env(cfg)
    cov = randomizers.coverage_experiment(mech, mdp, int(opts["coverage_k"]), cfg.delta, int(opts["n_trials"]), rng)
    report.update(coverage_k=cov.k, coverage_delta=cov.delta, coverage_trials=cov.n_trials, coverage=list(cov.fractions))
    text = json.dumps(report, indent=2)
    (_out_dir(opts) / "audit.json").write_text(text + "\n", encoding="utf-8")
    print(text)
    return EXIT_OK


def cmd_dump_stats(opts: dict) -> int:
    if "K" not in opts:
        opts = {**opts, "K": 1000}
    cfg = run_config(opts, require_seed=True)
    epsilons = opts["eps"] or [0.2, 2.0, 20.0]
    rows = harness.export_stat_samples(cfg, int(opts["n_repeats"]), epsilons)
    path = harness.write_stats_csv(_out_dir(opts) / "stats.csv", rows, _echo(opts, **cfg.to_dict(), eps=epsilons))
    print(f"{path}: {len(rows)} rows")
    return EXIT_OK


def cmd_lower_bound(opts: dict) -> int:
    S, A, H, K = (int(opts.get(k, d)) for k, d in (("S", 2), ("A", 2), ("H", 2), ("K", 10_000)))
    epsilons = opts["eps"] or [0.2, 2.0, 20.0]
    for eps in epsilons:
        try:
            lb = ldp_lower_bound(S, A, H, K, eps)
        except ValueError as exc:
            raise ConfigError(str(exc))
        explicit = "n/a" if lb.explicit is None else f"{lb.explicit:.6g}"
        print(f"eps={eps:g} reference={lb.reference:.6g} explicit={explicit}")
    return EXIT_OK


COMMANDS = {
    "gen-env": cmd_gen_env,
    "run": cmd_run,
    "sweep": cmd_sweep,
    "audit": cmd_audit,
    "dump-stats": cmd_dump_stats,
    "lower-bound": cmd_lower_bound,
}


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    try:
        args = build_parser().parse_args(argv)
        opts = resolve(args)
        return COMMANDS[args.command](opts)
    except ConfigError as exc:
        print(f"privrl: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001
        print(f"privrl: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
