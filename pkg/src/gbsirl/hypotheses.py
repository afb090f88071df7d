"""Finite hypothesis spaces built from a sample of candidate rewards.

A hypothesis is the +/-1 labelling of (state, action) pairs that marks the
greedy actions of one reward. States on which every hypothesis agrees are
grouped into cells; queries are issued per cell.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.optimize import linprog
from scipy.sparse.csgraph import connected_components

from .mdp import DEFAULT_TIE_TOL, DEFAULT_TOL, Mdp, RewardFunction, greedy_mask, solve_q_batch

FORMAT_VERSION = 1
PRIOR_EPSILON = 1e-3
DEFAULT_LP_CAP = 10**7
_SOLVE_CHUNK = 64


class CapacityError(RuntimeError):
    """Raised when an exact computation would exceed its configured size cap."""


@dataclass(frozen=True, eq=False)
class Hypothesis:
    labels: np.ndarray  # int8, +1 on greedy actions, -1 elsewhere
    source_reward_index: int

    def greedy_set(self, state: int) -> frozenset:
        return frozenset(np.flatnonzero(self.labels[state] > 0).tolist())


@dataclass(frozen=True, eq=False)
class Partition:
    cell_of_state: np.ndarray
    representatives: np.ndarray
    num_cells: int

    def states_in(self, cell: int) -> np.ndarray:
        return np.flatnonzero(self.cell_of_state == cell)


@dataclass(frozen=True, eq=False)
class NeighborGraph:
    k: int
    edges: np.ndarray  # (E, 2) array of cell pairs i < j
    disagreement_counts: np.ndarray  # (E,) counts for the listed edges
    disagreements: np.ndarray  # full (N, N) symmetric count matrix

    @property
    def num_cells(self) -> int:
        return self.disagreements.shape[0]

    def has_edge(self, i: int, j: int) -> bool:
        return i != j and self.disagreements[i, j] <= self.k


def compute_partition(labels: np.ndarray) -> Partition:
    """Group states with identical label vectors under every hypothesis.

    ``labels`` is the ``(H, S, A)`` greedy mask. Cells are numbered in order of
    their smallest state, which is also the representative.
    """
    H, S, A = labels.shape
    packed = np.packbits(np.ascontiguousarray(labels.transpose(1, 0, 2)).reshape(S, H * A), axis=1)
    cell_of_state = np.empty(S, dtype=np.int64)
    seen: dict[bytes, int] = {}
    reps = []
    for x in range(S):
        key = packed[x].tobytes()
        cell = seen.get(key)
        if cell is None:
            cell = seen[key] = len(reps)
            reps.append(x)
        cell_of_state[x] = cell
    return Partition(cell_of_state, np.asarray(reps, dtype=np.int64), len(reps))


class HypothesisSpace:
    """Deduplicated hypotheses, their prior and the induced state partition.

    ``labels`` is a boolean ``(H, S, A)`` greedy mask; ``reward_values`` holds
    the source reward of each hypothesis (``None`` for label-only spaces).
    """

    def __init__(self, labels: np.ndarray, prior: np.ndarray,
                 reward_values: np.ndarray | None = None,
                 source_indices: Sequence[int] | None = None,
                 partition: Partition | None = None,
                 merged_into: Sequence[int] | None = None):
        labels = np.asarray(labels, dtype=bool)
        if labels.ndim != 3 or labels.shape[0] < 1:
            raise ValueError("labels must be a non-empty (hypotheses, states, actions) array")
        if not np.all(labels.any(axis=2)):
            raise ValueError("every hypothesis needs at least one greedy action per state")
        prior = np.asarray(prior, dtype=float)
        if prior.shape != (labels.shape[0],) or np.any(prior <= 0):
            raise ValueError("prior must be strictly positive with one entry per hypothesis")
        self.labels = labels
        self.prior = prior / prior.sum()
        self.reward_values = None if reward_values is None else np.asarray(reward_values, dtype=float)
        if source_indices is None:
            source_indices = range(labels.shape[0])
        self.source_indices = np.asarray(list(source_indices), dtype=np.int64)
        # input reward index -> hypothesis index after deduplication
        if merged_into is None:
            merged_into = np.arange(labels.shape[0])
        self.merged_into = np.asarray(merged_into, dtype=np.int64)
        self.partition = partition if partition is not None else compute_partition(labels)
        reps = self.partition.representatives
        self.cell_mask = labels[:, reps, :]  # (H, N, A)
        self.cell_signed = np.where(self.cell_mask, 1.0, -1.0)
        self._signed_flat = self.cell_signed.reshape(self.num_hypotheses, -1)
        for arr in (self.labels, self.prior, self.cell_mask, self.cell_signed):
            arr.setflags(write=False)

    @classmethod
    def from_labels(cls, labels: np.ndarray, prior: Sequence[float] | None = None,
                    reward_values: np.ndarray | None = None) -> "HypothesisSpace":
        """Space from explicit labels; accepts a boolean mask or +/-1 values.

        Duplicate label arrays are merged and their prior mass summed.
        """
        labels = np.asarray(labels)
        mask = labels > 0 if labels.dtype != bool else labels
        if prior is None:
            prior = np.ones(mask.shape[0])
        return _dedup(mask, np.asarray(prior, dtype=float), reward_values)

    @property
    def num_hypotheses(self) -> int:
        return self.labels.shape[0]

    @property
    def num_states(self) -> int:
        return self.labels.shape[1]

    @property
    def num_actions(self) -> int:
        return self.labels.shape[2]

    @property
    def num_cells(self) -> int:
        return self.partition.num_cells

    def hypothesis(self, k: int) -> Hypothesis:
        signed = np.where(self.labels[k], 1, -1).astype(np.int8)
        return Hypothesis(signed, int(self.source_indices[k]))

    def reward(self, k: int) -> RewardFunction:
        if self.reward_values is None:
            raise ValueError("this hypothesis space carries no reward functions")
        return RewardFunction(self.reward_values[k])

    def label_sums(self, probs: np.ndarray) -> np.ndarray:
        """``sum_h p(h) h([x]_i, a)`` for every cell and action, shape ``(N, A)``."""
        return (probs @ self._signed_flat).reshape(self.num_cells, self.num_actions)

    def index_of_source(self, source_index: int) -> int:
        """Hypothesis that absorbed reward ``source_index`` during deduplication."""
        return int(self.merged_into[source_index])

    def permuted(self, order: Sequence[int]) -> "HypothesisSpace":
        """Same space with hypotheses listed in ``order`` (prior follows)."""
        order = np.asarray(order, dtype=np.int64)
        if sorted(order.tolist()) != list(range(self.num_hypotheses)):
            raise ValueError("order must be a permutation of hypothesis indices")
        rv = None if self.reward_values is None else self.reward_values[order]
        inverse = np.empty_like(order)
        inverse[order] = np.arange(order.size)
        return HypothesisSpace(self.labels[order], self.prior[order], rv,
                               self.source_indices[order], self.partition,
                               inverse[self.merged_into])


def _dedup(mask: np.ndarray, weights: np.ndarray, reward_values: np.ndarray | None,
           ) -> HypothesisSpace:
    keep: list[int] = []
    prior: list[float] = []
    index: dict[bytes, int] = {}
    merged_into = np.empty(mask.shape[0], dtype=np.int64)
    for k in range(mask.shape[0]):
        key = np.packbits(mask[k]).tobytes()
        slot = index.get(key)
        if slot is None:
            slot = index[key] = len(keep)
            keep.append(k)
            prior.append(0.0)
        prior[slot] += weights[k]
        merged_into[k] = slot
    keep_arr = np.asarray(keep)
    rv = None if reward_values is None else np.asarray(reward_values)[keep_arr]
    return HypothesisSpace(mask[keep_arr], np.asarray(prior), rv, keep_arr,
                           merged_into=merged_into)


def default_prior_weights(rewards: Sequence[RewardFunction]) -> np.ndarray:
    """Prior weights proportional to reward sparsity, shifted to stay positive."""
    return np.array([r.sparsity + PRIOR_EPSILON for r in rewards])


def build_space(mdp: Mdp, rewards: Sequence[RewardFunction],
                prior_weights: Sequence[float] | None = None,
                tie_tol: float = DEFAULT_TIE_TOL, tol: float = DEFAULT_TOL) -> HypothesisSpace:
    """Solve every reward, label greedy actions, merge duplicate labellings."""
    if len(rewards) == 0:
        raise ValueError("reward list must not be empty")
    weights = default_prior_weights(rewards) if prior_weights is None else np.asarray(
        prior_weights, dtype=float)
    if weights.shape != (len(rewards),) or np.any(weights <= 0):
        raise ValueError("prior_weights must be positive and match the reward list")
    for r in rewards:
        r.check_compatible(mdp)
    values = np.stack([r.values for r in rewards])
    mask = np.empty(values.shape, dtype=bool)
    for start in range(0, len(rewards), _SOLVE_CHUNK):
        Q, _ = solve_q_batch(mdp, values[start:start + _SOLVE_CHUNK], tol)
        mask[start:start + _SOLVE_CHUNK] = greedy_mask(Q, tie_tol)
    return _dedup(mask, weights, values)


def neighbor_graph(space: HypothesisSpace, k: int = 1) -> NeighborGraph:
    """Cells ``i, j`` are k-neighbours when at most ``k`` hypotheses change greedy set."""
    if k < 1:
        raise ValueError("k must be a positive integer")
    weights = 1 << np.arange(space.num_actions, dtype=np.int64)
    if space.num_actions > 62:
        raise CapacityError("neighbor graphs support at most 62 actions")
    codes = (space.cell_mask.astype(np.int64) * weights).sum(axis=2)  # (H, N)
    N = space.num_cells
    D = np.zeros((N, N), dtype=np.int64)
    for i in range(N - 1):
        counts = (codes[:, i:i + 1] != codes[:, i + 1:]).sum(axis=0)
        D[i, i + 1:] = counts
        D[i + 1:, i] = counts
    iu, ju = np.triu_indices(N, k=1)
    sel = D[iu, ju] <= k
    edges = np.stack([iu[sel], ju[sel]], axis=1)
    return NeighborGraph(k, edges, D[iu, ju][sel], D)


def is_k_neighborly(graph: NeighborGraph) -> bool:
    """True iff every pair of cells is joined by a chain of k-neighbours."""
    N = graph.num_cells
    if N <= 1:
        return True
    adj = graph.disagreements <= graph.k
    np.fill_diagonal(adj, False)
    n_comp, _ = connected_components(adj, directed=False)
    return n_comp == 1


def coherence_parameter(space: HypothesisSpace, cap: int = DEFAULT_LP_CAP,
                        return_measures: bool = False):
    """Coherence parameter ``max_a min_mu max_h sum_i h([x]_i, a) mu_i``.

    The inner min-max is solved per action as the linear program
    ``min t  s.t.  M mu <= t, sum(mu) = 1, mu >= 0``.
    """
    H, N = space.num_hypotheses, space.num_cells
    if N * H > cap:
        raise CapacityError(
            f"coherence LP of size {N}x{H} exceeds cap {cap}; use the GbsV2 strategy, "
            "which does not need c*"
        )
    c = np.zeros(N + 1)
    c[-1] = 1.0
    A_eq = np.ones((1, N + 1))
    A_eq[0, -1] = 0.0
    bounds = [(0, None)] * N + [(None, None)]
    best = -np.inf
    measures = []
    for a in range(space.num_actions):
        M = space.cell_signed[:, :, a]
        A_ub = np.hstack([M, -np.ones((H, 1))])
        res = linprog(c, A_ub=A_ub, b_ub=np.zeros(H), A_eq=A_eq, b_eq=[1.0],
                      bounds=bounds, method="highs")
        if res.status != 0:
            raise RuntimeError(f"coherence LP failed for action {a}: {res.message}")
        mu = np.clip(res.x[:N], 0.0, None)
        mu /= mu.sum()
        value = float(np.max(M @ mu))
        measures.append(mu)
        best = max(best, value)
    best = float(np.clip(best, -1.0, 1.0))
    return (best, measures) if return_measures else best


def space_cache_key(mdp: Mdp, rewards: Sequence[RewardFunction], tie_tol: float,
                    prior_weights: Sequence[float] | None = None) -> str:
    h = hashlib.sha256()
    h.update(mdp.fingerprint())
    for r in rewards:
        h.update(np.ascontiguousarray(r.values).tobytes())
    h.update(np.array([tie_tol]).tobytes())
    if prior_weights is not None:
        h.update(np.asarray(prior_weights, dtype=float).tobytes())
    return h.hexdigest()


def save_space(space: HypothesisSpace, path: str | Path) -> None:
    """Write ``space`` as a compressed ``.npz`` archive (see README for the layout)."""
    meta = {"format": "gbsirl-hypothesis-space", "version": FORMAT_VERSION,
            "num_hypotheses": space.num_hypotheses, "num_states": space.num_states,
            "num_actions": space.num_actions, "num_cells": space.num_cells}
    arrays = dict(
        meta=np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8),
        labels=np.packbits(space.labels, axis=-1),
        prior=space.prior,
        source_indices=space.source_indices,
        merged_into=space.merged_into,
        cell_of_state=space.partition.cell_of_state,
        representatives=space.partition.representatives,
    )
    if space.reward_values is not None:
        arrays["reward_values"] = space.reward_values
    with open(path, "wb") as fh:
        np.savez_compressed(fh, **arrays)


def load_space(path: str | Path) -> HypothesisSpace:
    with np.load(path) as data:
        meta = json.loads(bytes(data["meta"]).decode())
        if meta.get("format") != "gbsirl-hypothesis-space" or meta.get("version") != FORMAT_VERSION:
            raise ValueError(f"unsupported hypothesis-space file: {meta}")
        A = meta["num_actions"]
        labels = np.unpackbits(data["labels"], axis=-1, count=A).astype(bool)
        partition = Partition(data["cell_of_state"], data["representatives"], meta["num_cells"])
        rv = data["reward_values"] if "reward_values" in data else None
        return HypothesisSpace(labels, data["prior"], rv, data["source_indices"], partition,
                               data["merged_into"])
