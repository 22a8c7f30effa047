"""Brute-force transport references, independent of the solvers.

Two tiny-by-design routines certify optimal transport values by direct
enumeration rather than optimization. They share no code with `iwot.ot`: the
point is to have a second route to the optimum, feasible only because the
inputs are small. Both are used by the test suite and by the `ot-check`
command.
"""

from itertools import combinations, permutations

import numpy as np

FEAS_ATOL = 1e-9


def permutation_transport(cost):
    """Exact uniform-marginal transport value of a square cost matrix.

    With both marginals uniform on n atoms, the optimum sits at a permutation
    coupling, so the value is min over permutations of mean assignment cost.
    Enumeration is n!, usable only for small n.
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2 or cost.shape[0] != cost.shape[1]:
        raise ValueError("permutation enumeration needs a square cost matrix")
    n = cost.shape[0]
    if n > 8:
        raise ValueError("refusing to enumerate %d! permutations" % n)
    rows = np.arange(n)
    best = np.inf
    for perm in permutations(range(n)):
        value = cost[rows, perm].sum() / n
        if value < best:
            best = value
    return float(best)


def vertex_transport(cost, p1, p2):
    """Exact transport value with arbitrary marginals by vertex enumeration.

    Every vertex of the transportation polytope is a basic feasible solution
    with at most m + n - 1 active entries, so scanning all supports of that
    size and keeping the feasible ones covers every vertex. Cost is
    combinatorial in m * n; keep the sizes tiny.
    """
    cost = np.asarray(cost, dtype=np.float64)
    p1 = np.asarray(p1, dtype=np.float64)
    p2 = np.asarray(p2, dtype=np.float64)
    if cost.ndim != 2 or cost.shape != (p1.size, p2.size):
        raise ValueError("cost shape must match the marginals")
    if abs(p1.sum() - p2.sum()) > FEAS_ATOL:
        raise ValueError("marginals have different total mass")
    m, n = cost.shape
    if m * n > 20:
        raise ValueError("refusing vertex enumeration beyond 20 plan entries")

    # Equality system A x = b over the vectorized plan: m row sums, n col sums.
    a_full = np.zeros((m + n, m * n))
    for i in range(m):
        a_full[i, i * n : (i + 1) * n] = 1.0
    for j in range(n):
        a_full[m + j, j::n] = 1.0
    b = np.concatenate([p1, p2])

    basis_size = m + n - 1
    flat_cost = cost.ravel()
    best = np.inf
    for support in combinations(range(m * n), basis_size):
        cols = list(support)
        solution, *_ = np.linalg.lstsq(a_full[:, cols], b, rcond=None)
        if (solution < -FEAS_ATOL).any():
            continue
        residual = a_full[:, cols] @ solution - b
        if np.abs(residual).max() > FEAS_ATOL:
            continue
        value = float(flat_cost[cols] @ solution)
        if value < best:
            best = value
    if not np.isfinite(best):
        raise ValueError("no feasible vertex found; marginals are inconsistent")
    return best
