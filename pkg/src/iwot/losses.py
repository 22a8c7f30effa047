"""Loss terms built on transport plans, and their hand-derived gradients.

The training objective is

    classification + beta * transport + eta * separation + epsilon * intra

where `transport` is the cross-domain transport value under cosine cost with
per-setting marginals, `separation` pushes cut pairs apart and kept pairs
together after thresholding the plan at the batch transport value, and
`intra` is a within-domain transport value from learned instance weights to
the uniform distribution. Instance weights enter as marginals: the raw
sigmoid outputs of the weight head are normalized over the batch to a
probability vector.

Gradients use a frozen-plan scheme. Each solved plan is treated as a constant
of the current step: the feature gradient flows through the cost matrix
entries the plans touch, and the marginal gradient of a transport value keeps
the per-row conditional transport distribution (the scaling structure of the
final solver iteration) fixed, which leaves the conditional expected cost of
each atom. Both routes are chained through cosine normalization and batch
weight normalization in closed form.
"""

from dataclasses import dataclass

import numpy as np

from . import ot
from .errors import ConfigError, DegenerateInputError
from .settings import LEARNED


@dataclass
class WeightAssignment:
    """Raw sigmoid weights of one batch and their normalization to a marginal."""

    raw: np.ndarray
    normalized: np.ndarray


def normalize_weights(raw):
    """Normalize nonnegative raw weights into a probability vector over the batch."""
    raw = np.asarray(raw, dtype=np.float64)
    if raw.ndim != 1 or raw.size == 0:
        raise ValueError("raw weights must be a nonempty 1-D array")
    if not np.isfinite(raw).all():
        raise ValueError("raw weights contain non-finite entries")
    if (raw < 0).any():
        raise ValueError("raw weights must be nonnegative")
    total = raw.sum()
    if total <= 0:
        raise DegenerateInputError("all raw weights are zero; no marginal can be formed")
    return WeightAssignment(raw=raw, normalized=raw / total)


@dataclass
class TransportTerm:
    """A solved transport term: its value, plan, cost matrix, and solver status."""

    value: float
    coupling: np.ndarray
    cost: np.ndarray
    converged: bool


def _solve(cost, p1, p2, solver, reg, tol, max_iter):
    if solver == "exact":
        return ot.solve_exact(cost, p1, p2), True
    if solver == "sinkhorn":
        result = ot.solve_sinkhorn(cost, p1, p2, reg=reg, tol=tol, max_iter=max_iter)
        return result.coupling, result.converged
    raise ConfigError("unknown solver %r (expected 'exact' or 'sinkhorn')" % (solver,))


def wot_loss(
    source_features,
    target_features,
    source_marginal,
    target_marginal,
    solver="exact",
    reg=0.05,
    tol=1e-6,
    max_iter=1000,
):
    """Cross-domain transport term: solve for a plan under cosine cost, score it.

    The value is the Frobenius inner product of the plan with the cost, i.e.
    the batch transport cost. Marginals are whatever the caller's setting
    dictates (uniform or normalized instance weights).
    """
    cost = ot.cosine_cost(source_features, target_features)
    coupling, converged = _solve(cost, source_marginal, target_marginal, solver, reg, tol, max_iter)
    return TransportTerm(ot.coupling_cost(coupling, cost), coupling, cost, converged)


def partial_coupling(coupling, cost, threshold):
    """Zero out plan entries whose pair cost exceeds the threshold.

    The threshold is the batch transport value; pairs exactly at it are kept.
    """
    coupling = np.asarray(coupling, dtype=np.float64)
    cost = np.asarray(cost, dtype=np.float64)
    if coupling.shape != cost.shape:
        raise ValueError("coupling and cost shapes differ")
    return np.where(cost <= threshold, coupling, 0.0)


def sa_loss(coupling, partial, cost):
    """Separation term over kept and cut plan mass.

    Cut mass (in the plan but not its thresholded version) enters through
    delta = 1 - exp(-(coupling - partial)), weighted by how far the pair is
    from maximal cosine distance; kept mass is weighted by its cost directly:

        sum(delta * (2 - cost)) + sum(partial * cost)
    """
    coupling = np.asarray(coupling, dtype=np.float64)
    partial = np.asarray(partial, dtype=np.float64)
    cost = np.asarray(cost, dtype=np.float64)
    if not (coupling.shape == partial.shape == cost.shape):
        raise ValueError("coupling, partial and cost shapes differ")
    if (partial > coupling + 1e-12).any():
        raise ValueError("partial plan exceeds the full plan somewhere")
    delta = 1.0 - np.exp(-(coupling - partial))
    return float((delta * (2.0 - cost)).sum() + (partial * cost).sum())


def iot_loss(features, marginal, solver="exact", reg=0.05, tol=1e-6, max_iter=1000):
    """Within-domain transport from the learned-weight marginal to uniform.

    The cost is cosine dissimilarity of the batch against itself; the value is
    zero exactly when the learned marginal is already uniform (mass can stay
    on the diagonal) and grows as weight concentrates.
    """
    features = np.asarray(features, dtype=np.float64)
    cost = ot.cosine_cost(features, features)
    n = features.shape[0]
    uniform = np.full(n, 1.0 / n)
    coupling, converged = _solve(cost, marginal, uniform, solver, reg, tol, max_iter)
    return TransportTerm(ot.coupling_cost(coupling, cost), coupling, cost, converged)


def total_loss(classification, transport, separation, intra, plan):
    """Combine the four terms with the plan's coefficients.

    Inactive terms should be passed as 0.0; their coefficients are zero in a
    well-formed plan anyway.
    """
    for name, value in (
        ("classification", classification),
        ("transport", transport),
        ("separation", separation),
        ("intra", intra),
    ):
        if not np.isfinite(value):
            raise ValueError("%s term is not finite" % name)
    return float(
        classification + plan.beta * transport + plan.eta * separation + plan.epsilon * intra
    )


@dataclass
class LossGrads:
    """Gradients of the transport-side losses wrt features and raw weights.

    Feature gradients cover the transport, separation and intra terms (the
    classification path is backpropagated separately by the caller). Raw
    weight gradients are None for domains whose weights the plan never uses.
    """

    source_features: np.ndarray
    target_features: np.ndarray
    source_raw: np.ndarray | None
    target_raw: np.ndarray | None


def _conditional_cost_rows(coupling, cost, marginal):
    # Expected pair cost per unit of row mass; zero-mass rows get zero gradient.
    totals = (coupling * cost).sum(axis=1)
    out = np.zeros_like(marginal)
    nz = marginal > 0
    out[nz] = totals[nz] / marginal[nz]
    return out


def _through_normalization(grad_normalized, assignment):
    # Chain d(loss)/d(normalized) through normalized = raw / sum(raw).
    total = assignment.raw.sum()
    return (grad_normalized - float(grad_normalized @ assignment.normalized)) / total


def loss_backward(
    plan,
    source_features,
    target_features,
    coupling,
    cost,
    partial=None,
    source_weights=None,
    target_weights=None,
    iot_coupling=None,
    iot_cost=None,
):
    """Gradients of beta*transport + eta*separation + epsilon*intra.

    All plans (`coupling`, `partial`, `iot_coupling`) are frozen constants of
    the step. `source_weights` / `target_weights` are WeightAssignment objects
    for the domains whose weights the plan consumes, and the returned raw
    gradients are with respect to the sigmoid outputs that produced them.
    """
    source_features = np.asarray(source_features, dtype=np.float64)
    target_features = np.asarray(target_features, dtype=np.float64)
    coupling = np.asarray(coupling, dtype=np.float64)
    cost = np.asarray(cost, dtype=np.float64)
    if plan.use_sa and partial is None:
        raise ValueError("plan uses the separation term but no partial plan was given")
    if plan.use_iot and (iot_coupling is None or iot_cost is None):
        raise ValueError("plan uses the intra term but no intra plan/cost was given")
    if plan.needs_source_weights and source_weights is None:
        raise ValueError("plan needs source weights but none were given")
    if plan.needs_target_weights and target_weights is None:
        raise ValueError("plan needs target weights but none were given")

    upstream = plan.beta * coupling
    if plan.use_sa:
        partial = np.asarray(partial, dtype=np.float64)
        delta = 1.0 - np.exp(-(coupling - partial))
        upstream = upstream + plan.eta * (partial - delta)
    grad_src, grad_tgt = ot.cosine_cost_grad(source_features, target_features, upstream)

    if plan.use_iot:
        iot_coupling = np.asarray(iot_coupling, dtype=np.float64)
        iot_cost = np.asarray(iot_cost, dtype=np.float64)
        domain = source_features if plan.iot_domain == "source" else target_features
        left, right = ot.cosine_cost_grad(domain, domain, plan.epsilon * iot_coupling)
        if plan.iot_domain == "source":
            grad_src = grad_src + left + right
        else:
            grad_tgt = grad_tgt + left + right

    source_raw = None
    if plan.needs_source_weights:
        grad_norm = np.zeros_like(source_weights.normalized)
        if plan.source_marginal == LEARNED:
            grad_norm += plan.beta * _conditional_cost_rows(
                coupling, cost, source_weights.normalized
            )
        if plan.use_iot and plan.iot_domain == "source":
            grad_norm += plan.epsilon * _conditional_cost_rows(
                iot_coupling, iot_cost, source_weights.normalized
            )
        source_raw = _through_normalization(grad_norm, source_weights)

    target_raw = None
    if plan.needs_target_weights:
        grad_norm = np.zeros_like(target_weights.normalized)
        if plan.target_marginal == LEARNED:
            grad_norm += plan.beta * _conditional_cost_rows(
                coupling.T, cost.T, target_weights.normalized
            )
        if plan.use_iot and plan.iot_domain == "target":
            grad_norm += plan.epsilon * _conditional_cost_rows(
                iot_coupling, iot_cost, target_weights.normalized
            )
        target_raw = _through_normalization(grad_norm, target_weights)

    return LossGrads(grad_src, grad_tgt, source_raw, target_raw)
