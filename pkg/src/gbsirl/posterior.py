"""Posterior over a hypothesis space under action and reward feedback.

All arithmetic is carried out on log-probabilities; every update ends with a
single max-shifted log-sum-exp normalisation.
"""
from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.special import logsumexp

from .hypotheses import HypothesisSpace

SNAPSHOT_VERSION = 1


class NoiseMode(str, enum.Enum):
    PER_ACTION = "per_action"
    AGGREGATED = "aggregated"


@dataclass(frozen=True, eq=False)
class NoiseModel:
    """Learner-side noise estimates.

    In per-action mode ``beta_hat`` is the probability of each non-greedy
    action and ``(|A|-1) beta_hat + gamma_hat = 1``. In aggregated mode they
    are the probabilities of the non-greedy and greedy action *sets*, so
    ``beta_hat + gamma_hat = 1``.
    """

    beta_hat: np.ndarray
    gamma_hat: np.ndarray
    mode: NoiseMode = NoiseMode.AGGREGATED
    sigma_hat: float = 1.0
    num_actions: int | None = None

    def __post_init__(self):
        beta = np.atleast_1d(np.asarray(self.beta_hat, dtype=float))
        gamma = np.atleast_1d(np.asarray(self.gamma_hat, dtype=float))
        beta, gamma = np.broadcast_arrays(beta, gamma)
        object.__setattr__(self, "beta_hat", beta.copy())
        object.__setattr__(self, "gamma_hat", gamma.copy())
        object.__setattr__(self, "mode", NoiseMode(self.mode))
        if np.any(beta <= 0) or np.any(beta >= 1):
            raise ValueError("beta_hat must lie in (0, 1)")
        if np.any(beta > gamma):
            raise ValueError("beta_hat must not exceed gamma_hat")
        if self.mode is NoiseMode.PER_ACTION:
            if self.num_actions is None:
                raise ValueError("per-action noise needs num_actions")
            total = (self.num_actions - 1) * beta + gamma
        else:
            total = beta + gamma
        if np.any(np.abs(total - 1.0) > 1e-9):
            raise ValueError(f"noise estimates violate the {self.mode.value} normalisation")
        if not self.sigma_hat > 0:
            raise ValueError("sigma_hat must be positive")

    @classmethod
    def per_action(cls, beta_hat, num_actions: int, num_states: int | None = None,
                   sigma_hat: float = 1.0) -> "NoiseModel":
        beta = _per_state(beta_hat, num_states)
        return cls(beta, 1.0 - (num_actions - 1) * beta, NoiseMode.PER_ACTION, sigma_hat,
                   num_actions)

    @classmethod
    def aggregated(cls, beta_hat, num_states: int | None = None,
                   sigma_hat: float = 1.0) -> "NoiseModel":
        beta = _per_state(beta_hat, num_states)
        return cls(beta, 1.0 - beta, NoiseMode.AGGREGATED, sigma_hat)

    def at(self, x: int) -> tuple[float, float]:
        """``(beta_hat(x), gamma_hat(x))``; scalar models apply to every state."""
        i = 0 if self.beta_hat.size == 1 else x
        return float(self.beta_hat[i]), float(self.gamma_hat[i])


def _per_state(value, num_states):
    arr = np.atleast_1d(np.asarray(value, dtype=float))
    if num_states is not None and arr.size == 1:
        arr = np.full(num_states, arr[0])
    return arr


class Observation(NamedTuple):
    kind: str  # "action" or "reward"
    state: int
    value: float  # action index or observed reward


@dataclass(frozen=True, eq=False)
class Posterior:
    log_probs: np.ndarray
    history: tuple = field(default=())

    @property
    def probs(self) -> np.ndarray:
        return np.exp(self.log_probs)

    def to_json(self) -> str:
        return json.dumps({
            "version": SNAPSHOT_VERSION,
            "probabilities": {str(k): float(p) for k, p in enumerate(self.probs)},
            "history": [list(o) for o in self.history],
        })

    @classmethod
    def from_json(cls, text: str) -> "Posterior":
        data = json.loads(text)
        if data.get("version") != SNAPSHOT_VERSION:
            raise ValueError(f"unsupported posterior snapshot version {data.get('version')}")
        probs = np.array([data["probabilities"][str(k)] for k in range(len(data["probabilities"]))])
        with np.errstate(divide="ignore"):
            lp = np.log(probs)
        history = tuple(Observation(o[0], int(o[1]), o[2]) for o in data["history"])
        return cls(lp - logsumexp(lp), history)


def _normalise(log_probs: np.ndarray) -> np.ndarray:
    z = logsumexp(log_probs)
    if not np.isfinite(z):
        raise FloatingPointError("posterior lost all probability mass")
    return log_probs - z


def initial_posterior(space: HypothesisSpace) -> Posterior:
    return Posterior(np.log(space.prior) - logsumexp(np.log(space.prior)))


def action_log_likelihood(space: HypothesisSpace, x: int, a: int, noise: NoiseModel) -> np.ndarray:
    beta, gamma = noise.at(x)
    return np.where(space.labels[:, x, a], np.log(gamma), np.log(beta))


def reward_log_likelihood(space: HypothesisSpace, x: int, u: float, noise: NoiseModel) -> np.ndarray:
    if space.reward_values is None:
        raise ValueError("reward feedback needs a hypothesis space with reward functions")
    r_x = space.reward_values[:, x, :].mean(axis=1)
    return -((u - r_x) ** 2) / noise.sigma_hat


def update_action(post: Posterior, space: HypothesisSpace, x: int, a: int,
                  noise: NoiseModel) -> Posterior:
    """Greedy-consistent hypotheses scale by ``gamma_hat(x)``, others by ``beta_hat(x)``."""
    lp = _normalise(post.log_probs + action_log_likelihood(space, x, a, noise))
    return Posterior(lp, post.history + (Observation("action", int(x), int(a)),))


def update_reward(post: Posterior, space: HypothesisSpace, x: int, u: float,
                  noise: NoiseModel) -> Posterior:
    """Weigh each hypothesis by ``exp(-(u - r_k(x))^2 / sigma_hat)``."""
    lp = _normalise(post.log_probs + reward_log_likelihood(space, x, u, noise))
    return Posterior(lp, post.history + (Observation("reward", int(x), float(u)),))


def replay(space: HypothesisSpace, history, noise: NoiseModel) -> Posterior:
    """Recompute a posterior from the prior and an observation history."""
    post = initial_posterior(space)
    for obs in history:
        if obs.kind == "action":
            post = update_action(post, space, obs.state, int(obs.value), noise)
        else:
            post = update_reward(post, space, obs.state, obs.value, noise)
    return post


def cell_predictions(post: Posterior, space: HypothesisSpace):
    """Weighted prediction ``W`` and predicted action for every cell."""
    sums = space.label_sums(post.probs)
    return sums.max(axis=1), sums.argmax(axis=1)


def weighted_prediction(post: Posterior, space: HypothesisSpace, cell: int) -> tuple[float, int]:
    """``W(p, [x]_i)`` and the smallest action attaining it."""
    sums = post.probs @ space.cell_signed[:, cell, :]
    a_star = int(np.argmax(sums))
    return float(sums[a_star]), a_star


def map_hypothesis(post: Posterior) -> int:
    return int(np.argmax(post.log_probs))


def predicted_optimal_set(post: Posterior, space: HypothesisSpace, cell: int,
                          c_hat: float) -> frozenset:
    if not 0 < c_hat < 1:
        raise ValueError("c_hat must lie in (0, 1)")
    sums = post.probs @ space.cell_signed[:, cell, :]
    return frozenset(np.flatnonzero(sums > c_hat).tolist())


def incorrect_mass_ratio(post: Posterior, true_index: int) -> float:
    """Odds against the true hypothesis, ``(1 - p(h*)) / p(h*)``."""
    lp_true = post.log_probs[true_index]
    if lp_true == -np.inf:
        return float("inf")
    others = np.delete(post.log_probs, true_index)
    if others.size == 0:
        return 0.0
    return float(np.exp(logsumexp(others) - lp_true))
