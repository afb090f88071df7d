"""Empirical MAP error against the convergence-rate bound on threshold hypothesis spaces.

Hypothesis k labels states left of k with one action and the rest with
another, which makes the space 1-neighborly. Trials use GbsV1 with per-action
noise and an overestimated noise level.

    python scripts/bound_check.py --states 12 --actions 3 --trials 1000
"""
import argparse

import numpy as np

from gbsirl.experiment import TrialContext, check_bound, run_trials
from gbsirl.hypotheses import HypothesisSpace, coherence_parameter, is_k_neighborly, neighbor_graph
from gbsirl.posterior import NoiseMode, NoiseModel
from gbsirl.strategies import StrategyConfig, StrategyKind, compute_bound


def threshold_space(num_states, num_actions, rng):
    labels = np.zeros((num_states - 1, num_states, num_actions), dtype=bool)
    for k in range(1, num_states):
        lo, hi = rng.choice(num_actions, 2, replace=False)
        labels[k - 1, :k, lo] = True
        labels[k - 1, k:, hi] = True
    return HypothesisSpace.from_labels(labels)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--states", type=int, default=12)
    ap.add_argument("--actions", type=int, default=3)
    ap.add_argument("--trials", type=int, default=1000)
    ap.add_argument("--steps", type=int, default=60)
    ap.add_argument("--beta-star", type=float, default=0.1)
    ap.add_argument("--beta-hat", type=float, default=0.15)
    ap.add_argument("--delta", type=float, default=0.05)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    space = threshold_space(args.states, args.actions, np.random.default_rng(args.seed))
    graph = neighbor_graph(space, 1)
    c_star = coherence_parameter(space)
    true_index = space.num_hypotheses // 2
    ctx = TrialContext(space=space, true_index=true_index,
                       optimal_sets=space.labels[true_index],
                       noise=NoiseModel.per_action(args.beta_hat, args.actions),
                       strategy=StrategyConfig(StrategyKind.GBS_V1), beta_star=args.beta_star,
                       noise_mode=NoiseMode.PER_ACTION, num_steps=args.steps, graph=graph)
    beta, gamma = ctx.make_oracle(np.random.default_rng(0)).noise_levels(ctx.noise_mode)
    bound = compute_bound(space, ctx.noise, beta, gamma, args.delta, c_star)
    print(f"|H|={space.num_hypotheses} 1-neighborly={is_k_neighborly(graph)} c*={c_star:.4f} "
          f"epsilon={bound.epsilon:.4f} lambda={bound.lambda_:.4f} t_min={bound.t_min}")
    report = check_bound(run_trials(ctx, args.trials, args.seed), bound)
    for t in range(0, report.steps.size, 5):
        print(f"t={t:3d} error={report.error_rate[t]:.4f} bound={report.bound[t]:.4f}")
    print(f"violations: {report.violations or 'none'}")


if __name__ == "__main__":
    main()
