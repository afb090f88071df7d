"""Query selection rules and the sample-complexity bound calculator."""
from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass

import numpy as np

from .hypotheses import HypothesisSpace, NeighborGraph, coherence_parameter, neighbor_graph
from .posterior import NoiseModel, Posterior, cell_predictions, map_hypothesis

STRICT_TOL = 1e-12


class StrategyKind(str, enum.Enum):
    GBS_V1 = "gbs_v1"
    GBS_V2 = "gbs_v2"
    GBS_V3 = "gbs_v3"
    RANDOM = "random"
    IQBC = "iqbc"
    EMG = "emg"


@dataclass(frozen=True)
class StrategyConfig:
    kind: StrategyKind = StrategyKind.GBS_V2
    c_hat: float | None = None
    rng_seed: int = 0
    iqbc_weighted: bool = True

    def __post_init__(self):
        object.__setattr__(self, "kind", StrategyKind(self.kind))
        if self.kind is StrategyKind.GBS_V3:
            if self.c_hat is None or not 0 < self.c_hat < 1:
                raise ValueError("GbsV3 needs c_hat in (0, 1)")


@dataclass(frozen=True)
class Query:
    cell: int


@dataclass(frozen=True)
class Stop:
    map_index: int


def select_query_v2(post: Posterior, space: HypothesisSpace) -> int:
    """Cell with the least consensus (smallest weighted prediction)."""
    W, _ = cell_predictions(post, space)
    return int(np.argmin(W))


def eligible_pairs(W: np.ndarray, a_star: np.ndarray, graph: NeighborGraph,
                   threshold: float) -> np.ndarray:
    """Neighbour pairs with ``W > threshold`` at both ends and different predicted actions."""
    if graph.edges.size == 0:
        return graph.edges
    i, j = graph.edges[:, 0], graph.edges[:, 1]
    ok = (W[i] > threshold + STRICT_TOL) & (W[j] > threshold + STRICT_TOL) & (a_star[i] != a_star[j])
    return graph.edges[ok]


def select_query_v1(post: Posterior, space: HypothesisSpace, graph: NeighborGraph,
                    rng: np.random.Generator) -> int:
    """Query one end of a disagreeing 1-neighbour pair, else fall back to argmin W.

    Among several qualifying pairs the first in (i, j) order is used; a fair
    coin then picks the end.
    """
    W, a_star = cell_predictions(post, space)
    pairs = eligible_pairs(W, a_star, graph, float(W.min()))
    if len(pairs):
        return int(pairs[0][int(rng.integers(2))])
    return int(np.argmin(W))


def select_query_v3(post: Posterior, space: HypothesisSpace, c_hat: float):
    if not 0 < c_hat < 1:
        raise ValueError("c_hat must lie in (0, 1)")
    W, _ = cell_predictions(post, space)
    if W.min() < c_hat:
        return Query(int(np.argmin(W)))
    return Stop(map_hypothesis(post))


def select_query_random(space: HypothesisSpace, rng: np.random.Generator) -> int:
    return int(rng.integers(space.num_cells))


def vote_entropy(post: Posterior, space: HypothesisSpace, weighted: bool = True) -> np.ndarray:
    """Per-cell vote entropy of the committee's greedy-action votes.

    With ``weighted`` the vote shares are posterior masses; otherwise they are
    raw counts over ``|H|``.
    """
    if weighted:
        share = np.tensordot(post.probs, space.cell_mask.astype(float), axes=1)
    else:
        share = space.cell_mask.sum(axis=0) / space.num_hypotheses
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(share > 0, share * np.log(share), 0.0)
    return -terms.sum(axis=1)


def select_query_iqbc(post: Posterior, space: HypothesisSpace, weighted: bool = True) -> int:
    return int(np.argmax(vote_entropy(post, space, weighted)))


def select_query_emg(*args, **kwargs):
    """Expected-myopic-gain selection is not provided by this package."""
    raise NotImplementedError("EMG query selection is not implemented")


def discrimination_scores(post: Posterior, space: HypothesisSpace, parts: np.ndarray) -> np.ndarray:
    """Posterior-weighted between/within-part variance ratio of state rewards."""
    p = post.probs
    values = space.reward_values.mean(axis=2)  # (H, S)
    total = p.sum()
    mean = p @ values / total
    between = np.zeros(space.num_states)
    within = np.zeros(space.num_states)
    for g in np.unique(parts):
        sel = parts == g
        w = p[sel].sum()
        if w <= 0:
            continue
        m_g = p[sel] @ values[sel] / w
        between += w * (m_g - mean) ** 2
        within += p[sel] @ (values[sel] - m_g) ** 2
    return between / (within + 1e-9)


def select_reward_query(post: Posterior, space: HypothesisSpace, mdp=None) -> int:
    """State whose reward best separates hypotheses by their action at the GBS query state."""
    if space.reward_values is None:
        raise ValueError("reward queries need a hypothesis space with reward functions")
    cell = select_query_v2(post, space)
    x_query = int(space.partition.representatives[cell])
    parts = np.argmax(space.labels[:, x_query, :], axis=1)
    if np.unique(parts).size < 2:
        return x_query
    return int(np.argmax(discrimination_scores(post, space, parts)))


def select_query(config: StrategyConfig, post: Posterior, space: HypothesisSpace,
                 rng: np.random.Generator, graph: NeighborGraph | None = None):
    """Dispatch on ``config.kind``; returns a cell index or a :class:`Stop`."""
    kind = config.kind
    if kind is StrategyKind.GBS_V1:
        if graph is None:
            graph = neighbor_graph(space, 1)
        return select_query_v1(post, space, graph, rng)
    if kind is StrategyKind.GBS_V2:
        return select_query_v2(post, space)
    if kind is StrategyKind.GBS_V3:
        res = select_query_v3(post, space, config.c_hat)
        return res.cell if isinstance(res, Query) else res
    if kind is StrategyKind.RANDOM:
        return select_query_random(space, rng)
    if kind is StrategyKind.IQBC:
        return select_query_iqbc(post, space, config.iqbc_weighted)
    return select_query_emg()


def coherence_dichotomy(post: Posterior, space: HypothesisSpace, graph: NeighborGraph,
                        c_star: float, tol: float = 1e-9) -> int:
    """Which side of the coherence dichotomy holds: 1, 2, or 0 for neither."""
    W, a_star = cell_predictions(post, space)
    if np.any(W <= c_star + tol):
        return 1
    if len(eligible_pairs(W, a_star, graph, c_star)):
        return 2
    return 0


@dataclass(frozen=True)
class BoundParams:
    epsilon: float
    c_star: float
    lambda_: float
    h_size: int
    delta: float
    t_min: float  # math.inf when the bound is vacuous

    def error_bound(self, t: int) -> float:
        """``min(1, |H| (1 - lambda)^t)``."""
        if self.lambda_ <= 0:
            return 1.0
        return min(1.0, self.h_size * (1.0 - self.lambda_) ** t)


def bound_from_parameters(epsilon: float, c_star: float, h_size: int, delta: float) -> BoundParams:
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    lam = epsilon * min((1.0 - c_star) / 2.0, 0.25)
    if lam <= 0:
        warnings.warn(f"convergence rate is non-positive (epsilon={epsilon:.4g}, "
                      f"c*={c_star:.4g}); the bound is vacuous", RuntimeWarning, stacklevel=2)
        t_min = math.inf
    else:
        t_min = math.ceil(math.log(h_size / delta) / lam)
    return BoundParams(float(epsilon), float(c_star), max(float(lam), 0.0), int(h_size),
                       float(delta), t_min)


def noise_epsilon(noise: NoiseModel, beta_star, gamma_star) -> float:
    """Worst-case expected contraction margin over states."""
    beta_star = np.asarray(beta_star, dtype=float)
    gamma_star = np.asarray(gamma_star, dtype=float)
    bh, gh = noise.beta_hat, noise.gamma_hat
    per_state = gamma_star * (gh - bh) / gh + beta_star * (bh - gh) / bh
    return float(np.min(per_state))


def compute_bound(space: HypothesisSpace, noise: NoiseModel, beta_star, gamma_star,
                  delta: float = 0.05, c_star: float | None = None) -> BoundParams:
    """Convergence rate and query budget for the given true and estimated noise.

    ``beta_star``/``gamma_star`` are per-state expert noise levels in the same
    units as ``noise`` (see :meth:`ExpertOracle.noise_levels`).
    """
    beta_star = np.atleast_1d(np.asarray(beta_star, dtype=float))
    gamma_star = np.atleast_1d(np.asarray(gamma_star, dtype=float))
    alpha = float(beta_star.max())
    below = np.flatnonzero(noise.beta_hat < alpha - 1e-12)
    if below.size:
        raise ValueError(f"beta_hat({below[0]}) = {noise.beta_hat[below[0]]:.4g} is below "
                         f"the expert noise level alpha = {alpha:.4g}")
    if np.any(np.abs(noise.beta_hat - alpha) <= 1e-12):
        warnings.warn("beta_hat equals alpha at some state; the rate guarantee needs "
                      "beta_hat > alpha", RuntimeWarning, stacklevel=2)
    eps = noise_epsilon(noise, beta_star, gamma_star)
    if c_star is None:
        c_star = coherence_parameter(space)
    return bound_from_parameters(eps, c_star, space.num_hypotheses, delta)
