"""Independent reference implementations used as test oracles."""
import numpy as np

from gbsirl.hypotheses import HypothesisSpace


def random_kernel(rng, num_states, num_actions):
    return rng.dirichlet(np.ones(num_states), size=(num_actions, num_states))


def threshold_space(num_states, num_actions, rng, prior=None):
    """Interior thresholds on a line: h_k picks one action left of k, another from k on.

    Neighbouring states differ only in the hypothesis whose threshold sits
    between them, so the space is 1-neighborly.
    """
    labels = np.zeros((num_states - 1, num_states, num_actions), dtype=bool)
    for k in range(1, num_states):
        lo, hi = rng.choice(num_actions, 2, replace=False)
        labels[k - 1, :k, lo] = True
        labels[k - 1, k:, hi] = True
    return HypothesisSpace.from_labels(labels, prior)


def brute_force_posterior(prior, labels, reward_means, history, beta, gamma, sigma_hat):
    """Direct Bayes: prior times the product of likelihoods, normalised once."""
    weights = np.array(prior, dtype=float).copy()
    for kind, x, value in history:
        for k in range(len(weights)):
            if kind == "action":
                weights[k] *= gamma if labels[k][x][int(value)] else beta
            else:
                weights[k] *= np.exp(-((value - reward_means[k][x]) ** 2) / sigma_hat)
    return weights / weights.sum()


def simplex_grid(dim, steps):
    """All points of the probability simplex in ``dim`` dimensions with spacing 1/steps."""
    if dim == 1:
        return np.ones((1, 1))
    head = np.indices((steps + 1,) * (dim - 1)).reshape(dim - 1, -1)
    head = head[:, head.sum(axis=0) <= steps]
    counts = np.vstack([head, steps - head.sum(axis=0)])
    return counts.T / steps


def grid_coherence(signed_cells, resolution):
    """c* by exhaustive search over a simplex grid (signed labels, hypotheses x cells x actions)."""
    H, N, A = signed_cells.shape
    mu = simplex_grid(N, int(round(1 / resolution)))
    return max(float(np.min(np.max(signed_cells[:, :, a] @ mu.T, axis=0))) for a in range(A))


def partition_by_pairs(labels):
    """Cell ids by pairwise comparison of full label columns (first occurrence order)."""
    S = labels.shape[1]
    cell = [-1] * S
    nxt = 0
    for x in range(S):
        if cell[x] >= 0:
            continue
        cell[x] = nxt
        for y in range(x + 1, S):
            if cell[y] < 0 and np.array_equal(labels[:, x, :], labels[:, y, :]):
                cell[y] = nxt
        nxt += 1
    return np.array(cell)
