"""Reward-only feedback on the 19x10 grid: sparse goal reward against its shaped version.

    python scripts/shaping_experiment.py --trials 200
"""
import argparse

from gbsirl.experiment import ExperimentConfig, mean_ci, queries_to_accuracy, run_experiment


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--strategy", default="gbs_v2")
    ap.add_argument("--trials", type=int, default=200)
    ap.add_argument("--steps", type=int, default=100)
    ap.add_argument("--pool", type=int, default=500)
    ap.add_argument("--sigma", type=float, default=0.0)
    ap.add_argument("--sigma-hat", type=float, default=0.1)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    rows = {}
    for variant in ("shaped", "sparse"):
        cfg = ExperimentConfig(domain=f"grid19x10-{variant}", strategy=args.strategy,
                               feedback="reward", num_trials=args.trials,
                               num_steps=args.steps, pool_size=args.pool, sigma=args.sigma,
                               sigma_hat=args.sigma_hat, master_seed=args.seed)
        rows[variant] = mean_ci(queries_to_accuracy(run_experiment(cfg).records))
        m, lo, hi = rows[variant]
        print(f"{variant:<7} queries to 90%: {m:.3f} [{lo:.3f}, {hi:.3f}]")
    separated = rows["shaped"][2] < rows["sparse"][1]
    print(f"95% intervals separated: {separated}")


if __name__ == "__main__":
    main()
