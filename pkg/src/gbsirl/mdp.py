"""Finite MDPs, value iteration and policy evaluation.

Transition kernels are stored per action as ``(num_states, num_states)``
matrices, either dense numpy arrays or CSR matrices when the kernel is
sparse enough. Rewards are always state-action arrays; state-only rewards
are broadcast across actions on construction.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

DEFAULT_TOL = 1e-8
DEFAULT_TIE_TOL = 1e-6
SPARSE_DENSITY = 0.25


class ModelValidationError(ValueError):
    """Raised when an MDP or reward violates its structural invariants."""


def _as_kernel(matrix, force_sparse: bool | None = None):
    if sp.issparse(matrix):
        matrix = sp.csr_matrix(matrix, dtype=float)
        density = matrix.nnz / max(1, matrix.shape[0] * matrix.shape[1])
    else:
        matrix = np.asarray(matrix, dtype=float)
        density = np.count_nonzero(matrix) / max(1, matrix.size)
    use_sparse = density < SPARSE_DENSITY if force_sparse is None else force_sparse
    if use_sparse:
        return sp.csr_matrix(matrix)
    return matrix.toarray() if sp.issparse(matrix) else matrix


@dataclass(frozen=True, eq=False)
class Mdp:
    """Finite MDP without reward: ``transitions[a][x, y] = P(y | x, a)``."""

    num_states: int
    num_actions: int
    transitions: tuple
    discount: float

    def __post_init__(self):
        if self.num_states < 1 or self.num_actions < 1:
            raise ModelValidationError("MDP needs at least one state and one action")
        if not 0.0 <= self.discount < 1.0:
            raise ModelValidationError(f"discount must lie in [0, 1), got {self.discount}")
        if len(self.transitions) != self.num_actions:
            raise ModelValidationError(
                f"expected {self.num_actions} transition matrices, got {len(self.transitions)}"
            )
        for a, P in enumerate(self.transitions):
            if P.shape != (self.num_states, self.num_states):
                raise ModelValidationError(f"transition matrix for action {a} has shape {P.shape}")
            if sp.issparse(P):
                vals = P.data
                rows = np.asarray(P.sum(axis=1)).ravel()
            else:
                vals = P
                rows = P.sum(axis=1)
            if np.any(vals < 0) or not np.all(np.isfinite(vals)):
                raise ModelValidationError(f"negative or non-finite transition entries for action {a}")
            bad = np.flatnonzero(np.abs(rows - 1.0) > 1e-9)
            if bad.size:
                raise ModelValidationError(
                    f"transition rows for action {a} do not sum to 1 (first bad state {bad[0]})"
                )

    @classmethod
    def from_arrays(cls, transitions, discount: float, sparse: bool | None = None) -> "Mdp":
        """Build from an ``[action][state][next_state]`` array or list of matrices.

        ``sparse=None`` picks CSR storage when fewer than 25% of entries are nonzero.
        """
        if isinstance(transitions, np.ndarray):
            mats = [transitions[a] for a in range(transitions.shape[0])]
        else:
            mats = list(transitions)
        kernels = tuple(_as_kernel(m, sparse) for m in mats)
        num_states = kernels[0].shape[0]
        return cls(num_states, len(kernels), kernels, float(discount))

    @property
    def is_sparse(self) -> bool:
        return sp.issparse(self.transitions[0])

    def dense_transitions(self) -> np.ndarray:
        return np.stack(
            [P.toarray() if sp.issparse(P) else np.asarray(P) for P in self.transitions]
        )

    def expected_next(self, values: np.ndarray) -> np.ndarray:
        """Return ``E[values(y) | x, a]`` with shape ``(S, A) + values.shape[1:]``."""
        return np.stack([P @ values for P in self.transitions], axis=1)

    def fingerprint(self) -> bytes:
        parts = [np.array([self.num_states, self.num_actions], dtype=np.int64).tobytes(),
                 np.array([self.discount]).tobytes()]
        for P in self.transitions:
            M = sp.csr_matrix(P)
            M.sort_indices()
            parts += [M.indptr.tobytes(), M.indices.tobytes(), M.data.tobytes()]
        return b"".join(parts)


@dataclass(frozen=True, eq=False)
class RewardFunction:
    """State-action reward table."""

    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim != 2:
            raise ModelValidationError("reward values must be a (states, actions) array")
        if not np.all(np.isfinite(v)):
            raise ModelValidationError("reward values must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def from_state(cls, state_values: Sequence[float], num_actions: int) -> "RewardFunction":
        r = np.asarray(state_values, dtype=float).reshape(-1, 1)
        return cls(np.repeat(r, num_actions, axis=1))

    @property
    def num_states(self) -> int:
        return self.values.shape[0]

    @property
    def sparsity(self) -> float:
        """Fraction of zero entries."""
        return float(np.mean(self.values == 0.0))

    @property
    def is_state_only(self) -> bool:
        return bool(np.all(self.values == self.values[:, :1]))

    @property
    def state_values(self) -> np.ndarray:
        """Per-state reward as observed by reward feedback (mean over actions)."""
        return self.values.mean(axis=1)

    def check_compatible(self, mdp: Mdp) -> None:
        if self.values.shape != (mdp.num_states, mdp.num_actions):
            raise ModelValidationError(
                f"reward shape {self.values.shape} does not match MDP "
                f"({mdp.num_states}, {mdp.num_actions})"
            )

    def __eq__(self, other):
        if not isinstance(other, RewardFunction):
            return NotImplemented
        return self.values.shape == other.values.shape and bool(np.all(self.values == other.values))

    __hash__ = None


@dataclass(frozen=True, eq=False)
class QFunction:
    q: np.ndarray
    converged_residual: float

    def values(self) -> np.ndarray:
        return self.q.max(axis=1)

    def greedy_mask(self, tie_tol: float = DEFAULT_TIE_TOL) -> np.ndarray:
        return greedy_mask(self.q, tie_tol)


@dataclass(frozen=True, eq=False)
class Policy:
    probs: np.ndarray = field()

    def __post_init__(self):
        p = np.array(self.probs, dtype=float)
        if p.ndim != 2 or np.any(p < 0) or np.any(np.abs(p.sum(axis=1) - 1.0) > 1e-9):
            raise ModelValidationError("policy must be a row-stochastic (states, actions) array")
        object.__setattr__(self, "probs", p)

    @classmethod
    def from_mask(cls, mask: np.ndarray) -> "Policy":
        """Uniform policy over the ``True`` entries of each row."""
        m = np.asarray(mask, dtype=float)
        return cls(m / m.sum(axis=1, keepdims=True))

    @classmethod
    def deterministic(cls, actions: Sequence[int], num_actions: int) -> "Policy":
        actions = np.asarray(actions, dtype=int)
        p = np.zeros((actions.size, num_actions))
        p[np.arange(actions.size), actions] = 1.0
        return cls(p)


def _check_tol(tol: float) -> None:
    if not tol > 0:
        raise ValueError(f"tol must be positive, got {tol}")


def solve_q_batch(mdp: Mdp, rewards: np.ndarray, tol: float = DEFAULT_TOL):
    """Value iteration for a stack of rewards at once.

    ``rewards`` has shape ``(K, S, A)``. Returns ``(Q, residuals)`` with ``Q``
    of shape ``(K, S, A)`` and the per-reward sup-norm Bellman residual.
    """
    _check_tol(tol)
    R = np.asarray(rewards, dtype=float)
    if R.ndim != 3 or R.shape[1:] != (mdp.num_states, mdp.num_actions):
        raise ModelValidationError(f"reward stack shape {R.shape} does not match MDP")
    gamma = mdp.discount
    Rt = np.ascontiguousarray(R.transpose(1, 2, 0))  # (S, A, K)
    if gamma == 0.0:
        return R.copy(), np.zeros(R.shape[0])

    threshold = tol * (1.0 - gamma) / (2.0 * gamma)
    V = Rt.max(axis=1)
    while True:
        Q = Rt + gamma * mdp.expected_next(V)
        V_new = Q.max(axis=1)
        diff = np.max(np.abs(V_new - V)) if V.size else 0.0
        V = V_new
        if diff <= threshold:
            break
    Q = Rt + gamma * mdp.expected_next(V)
    backup = Rt + gamma * mdp.expected_next(Q.max(axis=1))
    residuals = np.abs(backup - Q).max(axis=(0, 1))
    return Q.transpose(2, 0, 1).copy(), residuals


def solve_q(mdp: Mdp, reward: RewardFunction, tol: float = DEFAULT_TOL) -> QFunction:
    """Optimal Q-function by value iteration, Bellman residual at most ``tol``."""
    _check_tol(tol)
    reward.check_compatible(mdp)
    Q, residuals = solve_q_batch(mdp, reward.values[None], tol)
    return QFunction(Q[0], float(residuals[0]))


def greedy_mask(q: np.ndarray, tie_tol: float = DEFAULT_TIE_TOL) -> np.ndarray:
    """Boolean ``(..., S, A)`` mask of actions within ``tie_tol`` of the row max."""
    if tie_tol < 0:
        raise ValueError("tie_tol must be non-negative")
    q = np.asarray(q)
    return q >= q.max(axis=-1, keepdims=True) - tie_tol


def greedy_action_set(q: QFunction, state: int, tie_tol: float = DEFAULT_TIE_TOL) -> frozenset:
    row = q.q[state]
    return frozenset(np.flatnonzero(row >= row.max() - tie_tol).tolist())


def greedy_policy(q: QFunction, tie_tol: float = DEFAULT_TIE_TOL) -> Policy:
    return Policy.from_mask(q.greedy_mask(tie_tol))


def evaluate_policy(mdp: Mdp, reward: RewardFunction, policy: Policy,
                    tol: float = DEFAULT_TOL) -> np.ndarray:
    """Value of ``policy``: solves ``V = r_pi + discount * P_pi V``."""
    _check_tol(tol)
    reward.check_compatible(mdp)
    pi = policy.probs
    if pi.shape != (mdp.num_states, mdp.num_actions):
        raise ModelValidationError("policy shape does not match MDP")
    r_pi = np.sum(pi * reward.values, axis=1)
    gamma = mdp.discount
    if gamma == 0.0:
        return r_pi
    if mdp.is_sparse:
        P_pi = sum(sp.diags(pi[:, a]) @ P for a, P in enumerate(mdp.transitions))
        A = sp.identity(mdp.num_states, format="csc") - gamma * sp.csc_matrix(P_pi)
        V = spla.spsolve(A, r_pi)

        def apply(v):
            return P_pi @ v
    else:
        P_pi = np.einsum("sa,asy->sy", pi, mdp.dense_transitions())
        V = np.linalg.solve(np.eye(mdp.num_states) - gamma * P_pi, r_pi)

        def apply(v):
            return P_pi @ v
    # a few fixed-point sweeps absorb any solver round-off beyond tol
    for _ in range(1000):
        V_next = r_pi + gamma * apply(V)
        res = np.max(np.abs(V_next - V))
        V = V_next
        if res <= tol * (1.0 - gamma):
            break
    return np.asarray(V)


def value_loss(mdp: Mdp, true_reward: RewardFunction, learned_policy: Policy,
               tol: float = DEFAULT_TOL, optimal_values: np.ndarray | None = None) -> float:
    """Mean over states of ``V*(x) - V^learned(x)`` under ``true_reward``."""
    if optimal_values is None:
        optimal_values = solve_q(mdp, true_reward, tol).values()
    v_learned = evaluate_policy(mdp, true_reward, learned_policy, tol)
    return float(np.mean(optimal_values - v_learned))
