"""Command-line entry point (``gbsirl`` or ``python -m gbsirl``)."""
from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from .environments import get_domain, list_domains
from .experiment import ConfigError, ExperimentConfig, cache_dir, experiment_bound, run_experiment
from .hypotheses import CapacityError, build_space, save_space, space_cache_key
from .mdp import DEFAULT_TIE_TOL, solve_q


def _cmd_solve(args) -> int:
    spec = get_domain(args.domain)
    t0 = time.perf_counter()
    q = solve_q(spec.mdp, spec.true_reward)
    elapsed = time.perf_counter() - t0
    mask = q.greedy_mask()
    if args.output:
        np.savez_compressed(args.output, q=q.q, greedy=mask)
    print(f"domain={spec.name} states={spec.mdp.num_states} actions={spec.mdp.num_actions} "
          f"residual={q.converged_residual:.3e} seconds={elapsed:.3f}")
    if args.show:
        for x in range(min(args.show, spec.mdp.num_states)):
            acts = ",".join(str(a) for a in np.flatnonzero(mask[x]))
            vals = " ".join(f"{v:.4f}" for v in q.q[x])
            print(f"{x}\t{acts}\t{vals}")
    return 0


def _cmd_run(args) -> int:
    cfg = ExperimentConfig.from_file(args.config)
    overrides = {}
    if args.output:
        overrides["output_path"] = args.output
    if args.trials is not None:
        overrides["num_trials"] = args.trials
    if overrides:
        cfg = ExperimentConfig.from_dict({**cfg.to_dict(), **overrides})
    result = run_experiment(cfg)
    acc = result.summary["per_step"]["policy_accuracy"]["mean"]
    q90 = result.summary["queries_to_90"]
    print(f"trials={cfg.num_trials} steps={cfg.num_steps} |H|={result.summary['num_hypotheses']} "
          f"final_accuracy={acc[-1]:.4f} queries_to_90={q90['mean']:.2f}")
    if cfg.output_path:
        print(f"wrote {cfg.output_path}")
    return 0


def _cmd_bound(args) -> int:
    cfg = ExperimentConfig.from_file(args.config)
    b = experiment_bound(cfg, c_star=args.c_star)
    print(json.dumps({"epsilon": b.epsilon, "c_star": b.c_star, "lambda": b.lambda_,
                      "num_hypotheses": b.h_size, "delta": b.delta,
                      "t_min": None if b.t_min == float("inf") else b.t_min}, indent=2))
    return 0


def _cmd_env_list(args) -> int:
    for name in list_domains():
        print(name)
    return 0


def _cmd_space_build(args) -> int:
    spec = get_domain(args.domain)
    rewards = spec.reward_pool(args.pool, args.seed)
    space = build_space(spec.mdp, rewards)
    key = space_cache_key(spec.mdp, rewards, DEFAULT_TIE_TOL)
    path = Path(args.output) if args.output else cache_dir() / f"space-{key}.npz"
    path.parent.mkdir(parents=True, exist_ok=True)
    save_space(space, path)
    print(f"|H|={space.num_hypotheses} cells={space.num_cells} -> {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gbsirl", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("solve", help="solve a domain's true reward and report Q*")
    s.add_argument("domain")
    s.add_argument("--output", help="write Q* and the greedy mask to this .npz file")
    s.add_argument("--show", type=int, default=0, metavar="N",
                   help="print greedy actions and Q-values of the first N states")
    s.set_defaults(func=_cmd_solve)

    r = sub.add_parser("run", help="run a Monte-Carlo experiment from a config file")
    r.add_argument("config")
    r.add_argument("--output", help="override output_path")
    r.add_argument("--trials", type=int, help="override num_trials")
    r.set_defaults(func=_cmd_run)

    b = sub.add_parser("bound", help="print the convergence-rate parameters for a config")
    b.add_argument("config")
    b.add_argument("--c-star", type=float, default=None,
                   help="use this coherence value instead of solving the LP")
    b.set_defaults(func=_cmd_bound)

    e = sub.add_parser("env", help="environment registry")
    esub = e.add_subparsers(dest="env_command", required=True)
    esub.add_parser("list", help="list available domains").set_defaults(func=_cmd_env_list)

    sp = sub.add_parser("space", help="hypothesis-space cache")
    spsub = sp.add_subparsers(dest="space_command", required=True)
    sb = spsub.add_parser("build", help="build and cache a hypothesis space")
    sb.add_argument("domain")
    sb.add_argument("--pool", type=int, default=500)
    sb.add_argument("--seed", type=int, default=None)
    sb.add_argument("--output", help="file to write instead of the cache directory")
    sb.set_defaults(func=_cmd_space_build)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, CapacityError, KeyError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
