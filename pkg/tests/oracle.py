"""Reference computations kept independent of the package internals.

The dense generator is built state by state from the model definition and
exponentiated with ``scipy.linalg.expm``; no uniformization, no sub-chains.
"""

from __future__ import annotations

import itertools

import numpy as np
from scipy.linalg import expm


def dense_generator(n: int, edges, omega: np.ndarray) -> np.ndarray:
    q = np.zeros((1 << n, 1 << n))
    for s in range(1 << n):
        for j, i in edges:
            if (s >> j) & 1 and not (s >> i) & 1:
                q[s, s | (1 << i)] += omega[i, j]
    np.fill_diagonal(q, -q.sum(axis=1))
    return q


def transition_matrix(q: np.ndarray, t: float) -> np.ndarray:
    """``expm(q t)``, computed on a shuffled state order.

    Broadcast generators are upper triangular (states only gain informed
    nodes), and scipy's triangular path for ``expm`` loses row sums on some
    of them; a fixed shuffle sidesteps it.  Row sums are checked.
    """
    perm = np.random.default_rng(0).permutation(q.shape[0])
    inv = np.argsort(perm)
    e = expm(q[np.ix_(perm, perm)] * t)[np.ix_(inv, inv)]
    err = np.abs(e.sum(axis=1) - 1.0).max()
    if err > 1e-10:
        raise AssertionError(f"oracle matrix exponential lost mass: {err:.2e}")
    return e


def exact_marginals(n: int, edges, omega: np.ndarray, x, t: float) -> np.ndarray:
    s0 = sum(1 << k for k in range(n) if x[k])
    v = transition_matrix(dense_generator(n, edges, omega), t)[s0]
    return np.array([v[[s for s in range(1 << n) if (s >> i) & 1]].sum() for i in range(n)])


def grid_points(total: int, parts: int):
    """Every nonnegative integer vector of length ``parts`` summing to ``total``."""
    return [c for c in itertools.product(range(total + 1), repeat=parts) if sum(c) == total]
