"""Queries-to-90%-accuracy table for several query strategies on one domain.

    python scripts/compare_strategies.py --domain random-50x5 --trials 200
"""
import argparse
import time

from gbsirl.experiment import ExperimentConfig, mean_ci, queries_to_accuracy, run_experiment


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--domain", default="random-50x5")
    ap.add_argument("--strategies", default="gbs_v2,random,iqbc")
    ap.add_argument("--feedback", default="action", choices=["action", "reward", "mixed"])
    ap.add_argument("--trials", type=int, default=200)
    ap.add_argument("--steps", type=int, default=100)
    ap.add_argument("--pool", type=int, default=500)
    ap.add_argument("--beta-star", type=float, default=0.1)
    ap.add_argument("--beta-hat", type=float, default=0.15)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--out-dir", default=None, help="write one CSV per strategy here")
    args = ap.parse_args()

    print(f"{'strategy':<10} {'mean':>8} {'ci95':>20} {'final acc':>10} {'seconds':>8}")
    for name in args.strategies.split(","):
        out = f"{args.out_dir}/{args.domain}_{name}.csv" if args.out_dir else None
        cfg = ExperimentConfig(domain=args.domain, strategy=name, feedback=args.feedback,
                               num_trials=args.trials, num_steps=args.steps,
                               pool_size=args.pool, beta_star=args.beta_star,
                               beta_hat=args.beta_hat, master_seed=args.seed,
                               workers=args.workers, output_path=out)
        t0 = time.perf_counter()
        result = run_experiment(cfg)
        m, lo, hi = mean_ci(queries_to_accuracy(result.records))
        final = result.summary["per_step"]["policy_accuracy"]["mean"][-1]
        print(f"{name:<10} {m:8.3f} {f'[{lo:.3f}, {hi:.3f}]':>20} {final:10.4f} "
              f"{time.perf_counter() - t0:8.1f}")


if __name__ == "__main__":
    main()
