"""Simulated expert answering action and reward queries with noise."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .mdp import DEFAULT_TIE_TOL, DEFAULT_TOL, Mdp, RewardFunction, solve_q
from .posterior import NoiseMode


@dataclass(eq=False)
class ExpertOracle:
    """Expert following a perturbed optimal policy.

    ``beta_star[x]`` and ``gamma_star[x]`` are *per-action* probabilities:
    every action outside ``optimal_sets[x]`` is drawn with ``beta_star[x]``,
    every optimal one with ``gamma_star[x]``. Reward answers are the true
    state reward plus Gaussian noise of variance ``sigma / 2``.
    """

    true_reward: RewardFunction | None
    optimal_sets: np.ndarray  # bool (S, A)
    beta_star: np.ndarray
    gamma_star: np.ndarray
    sigma: float = 0.0
    rng: np.random.Generator = field(default_factory=lambda: np.random.default_rng(0))

    def __post_init__(self):
        mask = np.asarray(self.optimal_sets, dtype=bool)
        S, A = mask.shape
        self.optimal_sets = mask
        self.beta_star = np.broadcast_to(np.asarray(self.beta_star, dtype=float), (S,)).copy()
        self.gamma_star = np.broadcast_to(np.asarray(self.gamma_star, dtype=float), (S,)).copy()
        n_opt = mask.sum(axis=1)
        if np.any(n_opt == 0):
            raise ValueError("every state needs at least one optimal action")
        total = n_opt * self.gamma_star + (A - n_opt) * self.beta_star
        if np.any(np.abs(total - 1.0) > 1e-9):
            raise ValueError("oracle action probabilities do not normalise")
        if np.any(self.beta_star < 0) or np.any(self.beta_star > self.gamma_star):
            raise ValueError("oracle needs 0 <= beta_star <= gamma_star")
        if self.sigma < 0:
            raise ValueError("sigma must be non-negative")
        self._probs = np.where(mask, self.gamma_star[:, None], self.beta_star[:, None])
        self._cdf = np.cumsum(self._probs, axis=1)

    @classmethod
    def per_action(cls, optimal_sets, beta_star, **kwargs) -> "ExpertOracle":
        """Each wrong action gets ``beta_star``; optimal actions share the rest."""
        mask = np.asarray(optimal_sets, dtype=bool)
        S, A = mask.shape
        beta = np.broadcast_to(np.asarray(beta_star, dtype=float), (S,))
        n_opt = mask.sum(axis=1)
        gamma = (1.0 - (A - n_opt) * beta) / n_opt
        kwargs.setdefault("true_reward", None)
        return cls(optimal_sets=mask, beta_star=beta, gamma_star=gamma, **kwargs)

    @classmethod
    def aggregated(cls, optimal_sets, beta_star, **kwargs) -> "ExpertOracle":
        """The wrong-action *set* gets total mass ``beta_star``, spread uniformly."""
        mask = np.asarray(optimal_sets, dtype=bool)
        S, A = mask.shape
        beta = np.broadcast_to(np.asarray(beta_star, dtype=float), (S,))
        n_opt = mask.sum(axis=1)
        n_wrong = A - n_opt
        beta_pa = np.where(n_wrong > 0, beta / np.maximum(n_wrong, 1), 0.0)
        gamma_pa = (1.0 - n_wrong * beta_pa) / n_opt
        kwargs.setdefault("true_reward", None)
        return cls(optimal_sets=mask, beta_star=beta_pa, gamma_star=gamma_pa, **kwargs)

    @classmethod
    def from_reward(cls, mdp: Mdp, true_reward: RewardFunction, beta_star,
                    mode: NoiseMode | str = NoiseMode.AGGREGATED, sigma: float = 0.0,
                    seed: int = 0, tie_tol: float = DEFAULT_TIE_TOL,
                    tol: float = DEFAULT_TOL) -> "ExpertOracle":
        mask = solve_q(mdp, true_reward, tol).greedy_mask(tie_tol)
        build = cls.per_action if NoiseMode(mode) is NoiseMode.PER_ACTION else cls.aggregated
        return build(mask, beta_star, true_reward=true_reward, sigma=sigma,
                     rng=np.random.default_rng(seed))

    @property
    def num_actions(self) -> int:
        return self.optimal_sets.shape[1]

    @property
    def alpha(self) -> float:
        """Maximum per-action noise level over states."""
        return float(np.max(self.beta_star))

    def noise_levels(self, mode: NoiseMode | str) -> tuple[np.ndarray, np.ndarray]:
        """``(beta*, gamma*)`` per state in the units of the given noise mode."""
        if NoiseMode(mode) is NoiseMode.PER_ACTION:
            return self.beta_star.copy(), self.gamma_star.copy()
        n_opt = self.optimal_sets.sum(axis=1)
        return (self.num_actions - n_opt) * self.beta_star, n_opt * self.gamma_star

    def action_probabilities(self, x: int) -> np.ndarray:
        return self._probs[x].copy()

    def sample_action(self, x: int, rng: np.random.Generator | None = None) -> int:
        rng = self.rng if rng is None else rng
        u = rng.random()
        a = int(np.searchsorted(self._cdf[x], u * self._cdf[x, -1], side="right"))
        return min(a, self.num_actions - 1)

    def sample_reward(self, x: int, rng: np.random.Generator | None = None) -> float:
        if self.true_reward is None:
            raise ValueError("this oracle has no reward function")
        rng = self.rng if rng is None else rng
        r = float(self.true_reward.state_values[x])
        if self.sigma == 0:
            return r
        return r + float(rng.normal(0.0, np.sqrt(self.sigma / 2.0)))
