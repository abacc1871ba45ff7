"""Risk-averse quantal-response objective and its per-state minimizer.

For a single state the decision variable is a row ``p`` on the action
simplex. Each initial distribution ``k`` contributes a vector of action
values ``q_k``; the population's cost is the KL-penalized (entropic) risk of
the random payoff ``<p, q_k>``, plus ``alpha`` times a convex regularizer.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .dp import check_flows, stage_q
from .exceptions import ContractViolation, ConvergenceError, DomainError
from .game import Policy
from .validation import check_finite, check_positive, check_prob_vector

_LOG_FLOOR = 1e-12


@dataclass(frozen=True)
class RegularizerSpec:
    """A convex regularizer on the action simplex."""

    kind: str
    evaluate: Callable[[np.ndarray], float]
    gradient: Callable[[np.ndarray], np.ndarray]
    hessian_diag: Callable[[np.ndarray], np.ndarray]
    requires_interior: bool

    def __repr__(self):
        return f"RegularizerSpec(kind={self.kind!r})"


def _entropy_value(p):
    p = np.asarray(p, dtype=float)
    return float(np.sum(p * np.log(np.maximum(p, _LOG_FLOOR))))


def _entropy_grad(p):
    return np.log(np.asarray(p, dtype=float)) + 1.0


def _barrier_value(p):
    p = np.asarray(p, dtype=float)
    if np.any(p <= 0):
        raise DomainError("log-barrier regularizer is undefined on the simplex boundary")
    return float(-np.sum(np.log(p)))


def _barrier_grad(p):
    p = np.asarray(p, dtype=float)
    if np.any(p <= 0):
        raise DomainError("log-barrier regularizer is undefined on the simplex boundary")
    return -1.0 / p


ENTROPY = RegularizerSpec(
    "entropy", _entropy_value, _entropy_grad,
    hessian_diag=lambda p: 1.0 / np.asarray(p, dtype=float),
    requires_interior=False,
)
LOG_BARRIER = RegularizerSpec(
    "log_barrier", _barrier_value, _barrier_grad,
    hessian_diag=lambda p: 1.0 / np.asarray(p, dtype=float) ** 2,
    requires_interior=True,
)

REGULARIZERS = {"entropy": ENTROPY, "log_barrier": LOG_BARRIER}


def make_regularizer(kind):
    """Look up a regularizer by name (``"entropy"`` or ``"log_barrier"``)."""
    if isinstance(kind, RegularizerSpec):
        return kind
    try:
        return REGULARIZERS[kind]
    except KeyError:
        raise ContractViolation(
            f"unknown regularizer {kind!r}; expected one of {sorted(REGULARIZERS)}"
        ) from None


@dataclass(frozen=True)
class RiskParams:
    """Risk-aversion temperature ``tau`` and bounded-rationality weight ``alpha``."""

    tau: float
    alpha: float

    def __post_init__(self):
        check_positive(self.tau, "tau")
        check_positive(self.alpha, "alpha", allow_zero=True)


def _prepare(row, q_slices, weights):
    row = np.asarray(row, dtype=float)
    q = check_finite(np.atleast_2d(np.asarray(q_slices, dtype=float)), "q_slices")
    w = np.asarray(weights, dtype=float)
    if q.shape[1] != row.shape[0]:
        raise ContractViolation(f"q_slices have {q.shape[1]} actions, row has {row.shape[0]}")
    if w.shape != (q.shape[0],):
        raise ContractViolation(f"weights length {w.shape} does not match K={q.shape[0]}")
    return row, q, w


def _shifted_terms(values, w, tau):
    """Pivot ``v*`` and terms ``w_k exp(-tau (v_k - v*))`` with ``v*`` the smallest
    supported value, so the largest exponent is zero."""
    support = w > 0
    pivot = values[support].min()
    terms = w * np.exp(-tau * (values - pivot))
    return pivot, terms


def risk_cost(row, q_slices, weights, tau):
    """Entropic risk ``(1/tau) log sum_k w_k exp(-tau <row, q_k>)``."""
    row, q, w = _prepare(row, q_slices, weights)
    check_positive(tau, "tau")
    values = q @ row
    pivot, terms = _shifted_terms(values, w, tau)
    return float(-pivot + np.log(terms.sum()) / tau)


def adversarial_weights(row, q_slices, weights, tau):
    """Tilted weights ``beta_k``: the worst-case reweighting of the initial
    distributions under the KL penalty. They sum to one."""
    row, q, w = _prepare(row, q_slices, weights)
    _, terms = _shifted_terms(q @ row, w, tau)
    return terms / terms.sum()


def combined_cost(row, q_slices, weights, params: RiskParams, reg: RegularizerSpec):
    """Risk cost plus ``alpha`` times the regularizer."""
    cost = risk_cost(row, q_slices, weights, params.tau)
    if params.alpha == 0:
        return cost
    return cost + params.alpha * reg.evaluate(np.asarray(row, dtype=float))


def cost_gradient(row, q_slices, weights, params: RiskParams, reg: RegularizerSpec):
    """Gradient of :func:`combined_cost` with respect to ``row``."""
    row, q, _ = _prepare(row, q_slices, weights)
    if np.any(row <= 0):
        raise DomainError("cost gradient requires a strictly interior row")
    beta = adversarial_weights(row, q_slices, weights, params.tau)
    grad = -(beta @ q)
    if params.alpha != 0:
        grad = grad + params.alpha * reg.gradient(row)
    return grad


def cost_hessian(row, q_slices, weights, params: RiskParams, reg: RegularizerSpec):
    """Hessian of :func:`combined_cost`: ``tau`` times the tilted covariance of
    the action values, plus the regularizer's diagonal curvature."""
    row, q, _ = _prepare(row, q_slices, weights)
    beta = adversarial_weights(row, q_slices, weights, params.tau)
    mean = beta @ q
    centered = q - mean
    H = params.tau * (centered.T * beta) @ centered
    if params.alpha != 0:
        H = H + np.diag(params.alpha * reg.hessian_diag(row))
    return H


def kkt_residual(grad):
    """Norm of the gradient projected on the simplex tangent space."""
    return float(np.linalg.norm(grad - grad.mean()))


def _newton_direction(g, H):
    # Jacobi-scaled bordered KKT system: H d + lam 1 = -g, sum(d) = 0
    n = g.shape[0]
    s = 1.0 / np.sqrt(np.diag(H))
    K = np.zeros((n + 1, n + 1))
    K[:n, :n] = H * s[:, None] * s[None, :]
    K[:n, n] = s
    K[n, :n] = s
    rhs = np.concatenate([-g * s, [0.0]])
    sol = np.linalg.solve(K, rhs)
    d = sol[:n] * s
    return d - d.mean() if abs(d.sum()) > 1e-15 else d


def best_response_row(q_slices, weights, params: RiskParams, reg: RegularizerSpec,
                      tol=1e-8, max_iters=10_000, start=None, eg_iters=25):
    """Minimize :func:`combined_cost` over the action simplex.

    Exponentiated-gradient descent with Armijo backtracking (constant 0.5,
    shrink 0.5), iterates kept in log space so they stay strictly interior.
    After ``eg_iters`` EG steps the remaining iterations are damped Newton
    steps, applied multiplicatively so rows stay interior; this only speeds
    up the tail on ill-conditioned rows and returns the same minimizer.
    Raises :class:`ConvergenceError` if the projected-gradient residual is
    still above ``tol`` after ``max_iters`` steps.
    """
    q = check_finite(np.atleast_2d(np.asarray(q_slices, dtype=float)), "q_slices")
    w = check_prob_vector(weights, n=q.shape[0], name="weights")
    check_positive(tol, "tol")
    n = q.shape[1]
    if params.alpha <= 0:
        raise ContractViolation("best response needs alpha > 0 for a unique interior minimizer")
    if n == 1:
        return np.ones(1)

    if start is None:
        logp = np.full(n, -np.log(n))
    else:
        start = check_prob_vector(start, n=n, name="start")
        if np.any(start <= 0):
            raise ContractViolation("start row must be strictly interior")
        logp = np.log(start)
        logp -= np.logaddexp.reduce(logp)

    tau, alpha = params.tau, params.alpha
    support = w > 0

    def parts(p):
        values = q @ p
        pivot = values[support].min()
        terms = w * np.exp(-tau * (values - pivot))
        total = terms.sum()
        return pivot, terms, total

    def cost(p):
        if reg.requires_interior and not np.all(p > 0):
            return np.inf
        pivot, _, total = parts(p)
        return -pivot + np.log(total) / tau + alpha * reg.evaluate(p)

    def grad(p):
        _, terms, total = parts(p)
        return -(terms / total) @ q + alpha * reg.gradient(p)

    p = np.exp(logp)
    fx = cost(p)
    max_step = step = 1.0 / alpha
    for it in range(max_iters):
        g = grad(p)
        residual = kkt_residual(g)
        if residual <= tol:
            return p
        # rounding level of the cost; Armijo decreases below it are invisible
        slack = 16 * np.finfo(float).eps * (max(1.0, abs(fx)) + 1.0 / tau)
        if it >= eg_iters:
            d = _newton_direction(g, cost_hessian(p, q, w, params, reg))
            if float(g @ d) < 0:
                # Newton direction applied multiplicatively keeps the row interior
                dlog = d / p
                s = 1.0
                while s > 1e-12:
                    cand = logp + s * dlog
                    cand -= np.logaddexp.reduce(cand)
                    p_new = np.exp(cand)
                    f_new = cost(p_new)
                    if f_new <= fx + 0.5 * float(g @ (p_new - p)) + slack:
                        logp, p, fx = cand, p_new, f_new
                        break
                    s *= 0.5
                else:
                    s = 0.0
                if s > 0:
                    continue
        first_try = True
        while True:
            cand = logp - step * (g - g.max())
            cand -= np.logaddexp.reduce(cand)
            p_new = np.exp(cand)
            f_new = cost(p_new)
            if f_new <= fx + 0.5 * float(g @ (p_new - p)) + slack:
                break
            step *= 0.5
            first_try = False
            if step < 1e-300:
                raise ConvergenceError(
                    "line search collapsed in best_response_row", residual=residual
                )
        logp, p, fx = cand, p_new, f_new
        if first_try:
            step = min(2.0 * step, max_step)
    residual = kkt_residual(grad(p))
    if residual <= tol:
        return p
    raise ConvergenceError(
        f"best_response_row did not reach tol={tol} in {max_iters} iterations "
        f"(residual {residual:.3e})",
        residual=residual,
    )


def best_response_policy(game, flows, weights, params: RiskParams, reg: RegularizerSpec,
                         tol=1e-8, max_iters=10_000, objective="risk"):
    """Regularized best response to a fixed flow set, built backward in time.

    At each ``t`` the per-flow Q slices are formed from the already-updated
    values at ``t + 1``; every state's row is then optimized and the values
    at ``t`` recomputed under the new rows. With ``objective="average"`` the
    risk term is replaced by the prior-weighted mean of the Q slices (the
    risk-neutral baseline).
    """
    mu = check_flows(game, flows)
    w = check_prob_vector(weights, n=flows.K, name="weights")
    if objective not in ("risk", "average"):
        raise ContractViolation(f"unknown objective {objective!r}")
    T, X = game.horizon, game.n_states
    probs = np.empty((T, X, game.n_actions))
    v_next = None
    one = np.ones(1)
    for t in range(T - 1, -1, -1):
        Q = stage_q(game, t, mu[:, t], v_next)
        for x in range(X):
            slices = Q[:, x, :]
            try:
                if objective == "risk":
                    row = best_response_row(slices, w, params, reg, tol, max_iters)
                else:
                    row = best_response_row((w @ slices)[None], one, params, reg, tol, max_iters)
            except ConvergenceError as err:
                raise ConvergenceError(
                    f"best response failed at (t={t}, x={x}): {err}",
                    residual=err.residual, location=(t, x),
                ) from err
            probs[t, x] = row
        v_next = np.einsum("kxu,xu->kx", Q, probs[t])
    return Policy(probs)
