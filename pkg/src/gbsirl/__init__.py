"""Active inverse reinforcement learning by generalized binary search."""

from .mdp import (Mdp, Policy, QFunction, RewardFunction, evaluate_policy, greedy_action_set,
                  solve_q, value_loss)
from .hypotheses import (HypothesisSpace, build_space, coherence_parameter, is_k_neighborly,
                         neighbor_graph)
from .posterior import (NoiseMode, NoiseModel, Posterior, initial_posterior, map_hypothesis,
                        update_action, update_reward, weighted_prediction)
from .oracle import ExpertOracle
from .strategies import StrategyConfig, StrategyKind, compute_bound

__version__ = "0.1.0"
