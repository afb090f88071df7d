"""Size, solve time and optimal-policy summary for every registered domain.

    python scripts/domain_report.py
"""
import time

import numpy as np

from gbsirl.environments import get_domain, list_domains
from gbsirl.mdp import solve_q


def main():
    print(f"{'domain':<18} {'states':>7} {'actions':>7} {'solve s':>8} {'multi-opt':>9} "
          f"{'mean V*':>9}")
    for name in list_domains():
        spec = get_domain(name)
        t0 = time.perf_counter()
        q = solve_q(spec.mdp, spec.true_reward)
        elapsed = time.perf_counter() - t0
        ties = float(np.mean(q.greedy_mask().sum(axis=1) > 1))
        print(f"{name:<18} {spec.mdp.num_states:7d} {spec.mdp.num_actions:7d} {elapsed:8.3f} "
              f"{ties:9.3f} {q.values().mean():9.3f}")


if __name__ == "__main__":
    main()
