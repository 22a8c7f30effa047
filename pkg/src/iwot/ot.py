"""Discrete optimal transport over couplings with arbitrary marginals.

Two solvers share one contract: given a cost matrix and probability vectors
p1, p2, find the coupling (a matrix with row sums p1 and column sums p2)
minimizing the Frobenius inner product with the cost.

`solve_exact` phrases the problem as a linear program over sparse equality
constraints and hands it to the HiGHS backend, returning a vertex-accurate
plan. `solve_sinkhorn` is an entropic solver written here directly: log-domain
dual iterations (all logsumexp, no unstabilized kernel products), optionally
warm-started through a geometric regularization schedule so that very small
final regularization stays cheap. Atoms with zero marginal mass are removed
before either solver runs and their rows/columns restored as zeros afterwards.

Cosine dissimilarity (1 - cosine similarity, range [0, 2]) is the cost used
throughout the package; its gradient with respect to both feature sets is
provided here so loss code can chain through it.
"""

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog

from .errors import DegenerateInputError, NumericalError
from .fileio import atomic_write_text, format_float

PROB_ATOL = 1e-9


def check_prob_vector(p, name="marginal"):
    """Validate and return a probability vector: 1-D, nonnegative, sums to 1."""
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 1 or p.size == 0:
        raise ValueError("%s must be a nonempty 1-D array" % name)
    if not np.isfinite(p).all():
        raise ValueError("%s contains non-finite entries" % name)
    if p.min() < -PROB_ATOL:
        raise ValueError("%s has negative entries" % name)
    total = p.sum()
    if abs(total - 1.0) > PROB_ATOL * max(1, p.size):
        raise ValueError("%s sums to %.17g, not 1" % (name, total))
    return np.maximum(p, 0.0)


def _check_problem(cost, p1, p2):
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2:
        raise ValueError("cost must be a 2-D matrix")
    if not np.isfinite(cost).all():
        raise ValueError("cost contains non-finite entries")
    p1 = check_prob_vector(p1, "p1")
    p2 = check_prob_vector(p2, "p2")
    if cost.shape != (p1.size, p2.size):
        raise ValueError(
            "cost shape %r does not match marginal sizes (%d, %d)"
            % (cost.shape, p1.size, p2.size)
        )
    return cost, p1, p2


def cosine_cost(features_a, features_b):
    """Pairwise cosine dissimilarity matrix between two feature batches.

    Entry (i, j) is 1 - cos(a_i, b_j), which lies in [0, 2]. Rows with zero
    norm have no direction, so they are rejected.
    """
    a = np.asarray(features_a, dtype=np.float64)
    b = np.asarray(features_b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ValueError("feature batches must be 2-D with equal width")
    norm_a = np.linalg.norm(a, axis=1)
    norm_b = np.linalg.norm(b, axis=1)
    if (norm_a == 0).any() or (norm_b == 0).any():
        raise DegenerateInputError("zero-norm feature row has no cosine direction")
    sim = (a / norm_a[:, None]) @ (b / norm_b[:, None]).T
    return np.clip(1.0 - sim, 0.0, 2.0)


def cosine_cost_grad(features_a, features_b, upstream):
    """Chain an upstream gradient through `cosine_cost`.

    Given d(loss)/d(cost) as `upstream`, returns (d(loss)/d(features_a),
    d(loss)/d(features_b)). The clip in the forward pass only binds at exact
    rounding boundaries and is treated as the identity here.
    """
    a = np.asarray(features_a, dtype=np.float64)
    b = np.asarray(features_b, dtype=np.float64)
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != (a.shape[0], b.shape[0]):
        raise ValueError("upstream gradient shape must match the cost matrix")
    norm_a = np.linalg.norm(a, axis=1)
    norm_b = np.linalg.norm(b, axis=1)
    if (norm_a == 0).any() or (norm_b == 0).any():
        raise DegenerateInputError("zero-norm feature row has no cosine direction")
    unit_a = a / norm_a[:, None]
    unit_b = b / norm_b[:, None]
    # cost = 1 - unit_a @ unit_b.T, so d(cost)/d(sim) = -1.
    g_unit_a = -upstream @ unit_b
    g_unit_b = -upstream.T @ unit_a
    # Through the normalization: project out the radial component, scale by 1/norm.
    grad_a = (g_unit_a - (g_unit_a * unit_a).sum(axis=1, keepdims=True) * unit_a)
    grad_a /= norm_a[:, None]
    grad_b = (g_unit_b - (g_unit_b * unit_b).sum(axis=1, keepdims=True) * unit_b)
    grad_b /= norm_b[:, None]
    return grad_a, grad_b


def coupling_cost(coupling, cost):
    """Frobenius inner product <coupling, cost>: the transport objective."""
    coupling = np.asarray(coupling, dtype=np.float64)
    cost = np.asarray(cost, dtype=np.float64)
    if coupling.shape != cost.shape:
        raise ValueError("coupling and cost shapes differ")
    return float((coupling * cost).sum())


class CouplingReport:
    """Feasibility summary for a would-be coupling."""

    def __init__(self, max_row_dev, max_col_dev, min_entry, tol):
        self.max_row_dev = float(max_row_dev)
        self.max_col_dev = float(max_col_dev)
        self.min_entry = float(min_entry)
        self.tol = float(tol)

    @property
    def passed(self):
        return (
            self.max_row_dev <= self.tol
            and self.max_col_dev <= self.tol
            and self.min_entry >= -self.tol
        )

    def __repr__(self):
        return (
            "CouplingReport(max_row_dev=%.3e, max_col_dev=%.3e, min_entry=%.3e, passed=%s)"
            % (self.max_row_dev, self.max_col_dev, self.min_entry, self.passed)
        )


def validate_coupling(coupling, p1, p2, tol=1e-8):
    """Measure how far `coupling` is from the polytope with marginals p1, p2."""
    coupling = np.asarray(coupling, dtype=np.float64)
    p1 = np.asarray(p1, dtype=np.float64)
    p2 = np.asarray(p2, dtype=np.float64)
    if coupling.shape != (p1.size, p2.size):
        raise ValueError("coupling shape does not match the marginals")
    row_dev = np.abs(coupling.sum(axis=1) - p1).max()
    col_dev = np.abs(coupling.sum(axis=0) - p2).max()
    return CouplingReport(row_dev, col_dev, coupling.min(), tol)


def _reduce_support(cost, p1, p2):
    rows = p1 > 0
    cols = p2 > 0
    if not rows.any() or not cols.any():
        raise DegenerateInputError("a marginal has empty support")
    return cost[np.ix_(rows, cols)], p1[rows], p2[cols], rows, cols


def _restore_support(plan, rows, cols):
    full = np.zeros((rows.size, cols.size))
    full[np.ix_(rows, cols)] = plan
    return full


def solve_exact(cost, p1, p2):
    """Minimum-cost coupling as the solution of the transportation LP.

    Marginal feasibility of the returned plan is within 1e-8 in every row and
    column. Solver failure raises NumericalError rather than returning a
    partial answer.
    """
    cost, p1, p2 = _check_problem(cost, p1, p2)
    active_cost, ap1, ap2, rows, cols = _reduce_support(cost, p1, p2)
    m, n = active_cost.shape
    # Row-sum constraints then column-sum constraints, on the vectorized plan.
    # The last column constraint is implied by the others (both marginals sum
    # to 1); dropping it keeps the system full-rank, which stops the solver
    # from declaring spurious infeasibility when some marginal entries sit
    # near its feasibility tolerance.
    row_block = sp.kron(sp.eye(m, format="csr"), np.ones((1, n)), format="csr")
    col_block = sp.kron(np.ones((1, m)), sp.eye(n, format="csr"), format="csr")
    a_eq = sp.vstack([row_block, col_block[:-1]], format="csr")
    b_eq = np.concatenate([ap1, ap2[:-1]])
    result = linprog(
        active_cost.ravel(),
        A_eq=a_eq,
        b_eq=b_eq,
        bounds=(0, None),
        method="highs",
    )
    if not result.success:
        raise NumericalError("exact transport LP failed: %s" % result.message)
    plan = np.where(result.x < 0, 0.0, result.x).reshape(m, n)
    return _restore_support(plan, rows, cols)


class SinkhornResult:
    """Entropic solver output: the plan plus convergence diagnostics."""

    def __init__(self, coupling, converged, iterations, marginal_error):
        self.coupling = coupling
        self.converged = bool(converged)
        self.iterations = int(iterations)
        self.marginal_error = float(marginal_error)


def _lse_rows(matrix):
    # logsumexp over axis=1, hand-rolled: scipy's version dominates runtime
    # at mini-batch sizes through per-call overhead.
    peak = matrix.max(axis=1)
    out = np.log(np.exp(matrix - peak[:, None]).sum(axis=1))
    out += peak
    return out


def _lse_cols(matrix):
    peak = matrix.max(axis=0)
    out = np.log(np.exp(matrix - peak[None, :]).sum(axis=0))
    out += peak
    return out


def _sinkhorn_stage(kernel, log_p1, log_p2, f, g, tol, max_iter, check_every=5):
    """Dual ascent at one regularization level (kernel = -cost/reg).

    Marginal error is measured every few iterations; convergence is geometric
    so the overshoot is cheaper than checking each pass.
    """
    p1 = np.exp(log_p1)
    p2 = np.exp(log_p2)
    iterations = 0
    error = np.inf
    while iterations < max_iter:
        for _ in range(min(check_every, max_iter - iterations)):
            f = log_p1 - _lse_rows(kernel + g[None, :])
            g = log_p2 - _lse_cols(kernel + f[:, None])
            iterations += 1
        log_plan = kernel + f[:, None] + g[None, :]
        row_err = np.abs(np.exp(_lse_rows(log_plan)) - p1).max()
        col_err = np.abs(np.exp(_lse_cols(log_plan)) - p2).max()
        error = max(row_err, col_err)
        if error <= tol:
            break
    return f, g, iterations, error


def _round_to_polytope(plan, p1, p2):
    """Project a near-feasible plan onto the coupling polytope.

    Overfull rows and columns are scaled down, never up, so entries stay
    nonnegative; the remaining deficit is patched with a rank-one correction
    whose row and column sums equal the deficits exactly. The objective moves
    by at most the pre-projection marginal error times the cost range.
    """
    row = plan.sum(axis=1)
    plan = plan * np.where(row > p1, p1 / np.where(row > 0, row, 1.0), 1.0)[:, None]
    col = plan.sum(axis=0)
    plan = plan * np.where(col > p2, p2 / np.where(col > 0, col, 1.0), 1.0)[None, :]
    deficit_r = np.maximum(p1 - plan.sum(axis=1), 0.0)
    deficit_c = np.maximum(p2 - plan.sum(axis=0), 0.0)
    total = deficit_r.sum()
    if total > 0:
        plan = plan + np.outer(deficit_r, deficit_c) / total
    return plan


def solve_sinkhorn(cost, p1, p2, reg=0.05, tol=1e-6, max_iter=1000, anneal=True):
    """Entropy-regularized coupling via log-domain dual iterations.

    With `anneal` on, the solver walks a geometric schedule of regularization
    levels from the cost scale down to `reg`, carrying the dual potentials
    across levels; this keeps small `reg` values from needing tens of
    thousands of iterations. The returned plan is projected onto the coupling
    polytope, so its marginals hold to machine precision regardless of where
    the iteration stopped; `marginal_error` reports the pre-projection dual
    residual and `converged` whether it reached `tol` within the budget.
    """
    cost, p1, p2 = _check_problem(cost, p1, p2)
    if reg <= 0:
        raise ValueError("reg must be positive")
    if tol < 0:
        raise ValueError("tol must be nonnegative")
    if max_iter < 1:
        raise ValueError("max_iter must be at least 1")
    active_cost, ap1, ap2, rows, cols = _reduce_support(cost, p1, p2)
    log_p1 = np.log(ap1)
    log_p2 = np.log(ap2)
    f = np.zeros(ap1.size)
    g = np.zeros(ap2.size)

    schedule = []
    if anneal:
        level = float(active_cost.max())
        while level > reg * 2.0:
            schedule.append(level)
            level /= 2.0
    schedule.append(float(reg))

    total_iterations = 0
    error = np.inf
    for stage_index, level in enumerate(schedule):
        last = stage_index == len(schedule) - 1
        stage_tol = tol if last else max(tol, 1e-3)
        stage_budget = max_iter if last else min(max_iter, 200)
        f, g, used, error = _sinkhorn_stage(
            -active_cost / level, log_p1, log_p2, f, g, stage_tol, stage_budget
        )
        total_iterations += used

    log_plan = -active_cost / schedule[-1] + f[:, None] + g[None, :]
    plan = np.exp(log_plan)
    if not np.isfinite(plan).all():
        raise NumericalError("entropic solver produced non-finite plan entries")
    plan = _round_to_polytope(plan, ap1, ap2)
    return SinkhornResult(
        _restore_support(plan, rows, cols),
        converged=error <= tol,
        iterations=total_iterations,
        marginal_error=error,
    )


def write_matrix_csv(path, matrix):
    """Dump a matrix as CSV with round-trip-exact floats, one row per line."""
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.ndim != 2:
        raise ValueError("matrix must be 2-D")
    lines = [",".join(format_float(x) for x in row) for row in matrix]
    atomic_write_text(path, "\n".join(lines) + "\n")
