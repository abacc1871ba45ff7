import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mfrqe import (
    ENTROPY,
    LOG_BARRIER,
    ContractViolation,
    ConvergenceError,
    DomainError,
    InitialSet,
    Policy,
    RiskParams,
    best_response_policy,
    best_response_row,
    combined_cost,
    cost_gradient,
    make_regularizer,
    propagate_flow_set,
    risk_cost,
)
from mfrqe.risk import adversarial_weights, cost_hessian, kkt_residual

from conftest import random_game, random_row_instance, random_simplex


def softmax(z):
    z = z - z.max()
    e = np.exp(z)
    return e / e.sum()


def barrier_oracle(q, alpha):
    """Minimizer of -<p, q> - alpha * sum(log p) by bisection on the multiplier."""
    # p_i = alpha / (c - q_i) with c > max(q) chosen so that sum(p) = 1
    lo, hi = q.max() + 1e-15, q.max() + alpha * len(q) + 1.0
    for _ in range(200):
        c = 0.5 * (lo + hi)
        if (alpha / (c - q)).sum() > 1:
            lo = c
        else:
            hi = c
    return alpha / (0.5 * (lo + hi) - q)


def test_single_flow_entropy_is_softmax(rng):
    for _ in range(50):
        q = rng.uniform(-3, 3, size=(1, int(rng.integers(2, 6))))
        alpha = float(rng.uniform(0.1, 5))
        p = best_response_row(q, [1.0], RiskParams(tau=1.0, alpha=alpha), ENTROPY, tol=1e-11)
        np.testing.assert_allclose(p, softmax(q[0] / alpha), atol=1e-9)


def test_single_flow_log_barrier_matches_bisection(rng):
    for _ in range(30):
        q = rng.uniform(-3, 3, size=(1, int(rng.integers(2, 5))))
        alpha = float(rng.uniform(0.1, 5))
        p = best_response_row(q, [1.0], RiskParams(tau=0.5, alpha=alpha), LOG_BARRIER, tol=1e-11)
        np.testing.assert_allclose(p, barrier_oracle(q[0], alpha), atol=1e-9)


def test_identical_slices_reduce_to_single_flow(rng):
    q = rng.normal(size=3)
    params = RiskParams(tau=2.0, alpha=0.7)
    p1 = best_response_row(q[None], [1.0], params, ENTROPY, tol=1e-11)
    p3 = best_response_row(np.tile(q, (3, 1)), [0.2, 0.3, 0.5], params, ENTROPY, tol=1e-11)
    np.testing.assert_allclose(p1, p3, atol=1e-9)


def test_kkt_residual_is_below_tolerance(rng):
    for _ in range(100):
        q, w, tau, alpha = random_row_instance(rng)
        params = RiskParams(tau=tau, alpha=alpha)
        for reg in (ENTROPY, LOG_BARRIER):
            p = best_response_row(q, w, params, reg, tol=1e-9)
            assert np.all(p > 0)
            assert p.sum() == pytest.approx(1.0, abs=1e-12)
            assert kkt_residual(cost_gradient(p, q, w, params, reg)) <= 1e-9


def test_best_response_beats_random_rows(rng):
    for _ in range(30):
        q, w, tau, alpha = random_row_instance(rng)
        params = RiskParams(tau=tau, alpha=alpha)
        p = best_response_row(q, w, params, ENTROPY)
        best = combined_cost(p, q, w, params, ENTROPY)
        for _ in range(50):
            other = random_simplex(rng, q.shape[1], floor=1e-6)
            assert combined_cost(other, q, w, params, ENTROPY) >= best - 1e-10


def test_gradient_matches_central_differences(rng):
    h = 1e-6
    for _ in range(50):
        q, w, tau, alpha = random_row_instance(rng)
        params = RiskParams(tau=tau, alpha=alpha)
        p = random_simplex(rng, q.shape[1], floor=0.05)
        for reg in (ENTROPY, LOG_BARRIER):
            g = cost_gradient(p, q, w, params, reg)
            fd = np.array([
                (combined_cost(p + h * e, q, w, params, reg)
                 - combined_cost(p - h * e, q, w, params, reg)) / (2 * h)
                for e in np.eye(len(p))
            ])
            assert np.linalg.norm(g - fd) <= 1e-5 * max(1.0, np.linalg.norm(fd))


def test_hessian_matches_gradient_differences(rng):
    h = 1e-6
    for _ in range(30):
        q, w, tau, alpha = random_row_instance(rng)
        params = RiskParams(tau=tau, alpha=alpha)
        p = random_simplex(rng, q.shape[1], floor=0.05)
        H = cost_hessian(p, q, w, params, ENTROPY)
        fd = np.stack([
            (cost_gradient(p + h * e, q, w, params, ENTROPY)
             - cost_gradient(p - h * e, q, w, params, ENTROPY)) / (2 * h)
            for e in np.eye(len(p))
        ])
        np.testing.assert_allclose(H, fd, atol=1e-5 * max(1.0, np.abs(fd).max()))
        assert np.all(np.linalg.eigvalsh(H) > 0)


def test_adversarial_weights_tilt_toward_worst_flow():
    q = np.array([[1.0, 1.0], [0.0, 0.0]])
    p = np.array([0.5, 0.5])
    beta = adversarial_weights(p, q, [0.5, 0.5], tau=3.0)
    assert beta.sum() == pytest.approx(1.0)
    assert beta[1] > beta[0]
    np.testing.assert_allclose(beta, softmax(np.array([-3.0, 0.0])))


def test_risk_cost_is_stable_for_large_spreads():
    q = np.array([[0.0, 0.0], [1e4, 1e4]])
    value = risk_cost([0.5, 0.5], q, [0.5, 0.5], tau=10.0)
    assert np.isfinite(value)
    assert value == pytest.approx(np.log(0.5) / 10.0)


def test_risk_cost_between_mean_and_worst(rng):
    for _ in range(100):
        q, w, tau, _ = random_row_instance(rng)
        p = random_simplex(rng, q.shape[1])
        losses = -(q @ p)
        value = risk_cost(p, q, w, tau)
        assert w @ losses - 1e-12 <= value <= losses[w > 0].max() + 1e-12


def test_zero_weight_slices_are_ignored():
    q = np.array([[1.0, 0.0], [-100.0, -100.0]])
    p = np.array([0.3, 0.7])
    assert risk_cost(p, q, [1.0, 0.0], tau=5.0) == pytest.approx(-0.3)


def test_log_barrier_rejects_boundary():
    with pytest.raises(DomainError):
        LOG_BARRIER.evaluate(np.array([1.0, 0.0]))
    with pytest.raises(DomainError):
        cost_gradient([1.0, 0.0], [[1.0, 2.0]], [1.0], RiskParams(1.0, 1.0), ENTROPY)


def test_entropy_evaluates_at_boundary():
    assert ENTROPY.evaluate(np.array([1.0, 0.0])) == pytest.approx(0.0)


def test_parameter_validation():
    with pytest.raises(ContractViolation):
        RiskParams(tau=0.0, alpha=1.0)
    with pytest.raises(ContractViolation):
        RiskParams(tau=1.0, alpha=-1.0)
    with pytest.raises(ContractViolation):
        make_regularizer("ridge")
    with pytest.raises(ContractViolation):
        best_response_row([[1.0, 2.0]], [1.0], RiskParams(1.0, 0.0), ENTROPY)
    with pytest.raises(ContractViolation):
        best_response_row([[1.0, np.nan]], [1.0], RiskParams(1.0, 1.0), ENTROPY)
    with pytest.raises(ContractViolation):
        best_response_row([[1.0, 2.0]], [0.5, 0.5], RiskParams(1.0, 1.0), ENTROPY)


def test_iteration_budget_raises_convergence_error():
    q = np.array([[5.0, -3.0, 1.0], [-4.0, 2.0, 0.5]])
    with pytest.raises(ConvergenceError) as info:
        best_response_row(q, [0.5, 0.5], RiskParams(2.0, 0.05), ENTROPY, tol=1e-14,
                          max_iters=1)
    assert info.value.residual > 0


def test_single_action_is_trivial():
    np.testing.assert_array_equal(
        best_response_row([[3.0]], [1.0], RiskParams(1.0, 1.0), ENTROPY), [1.0])


def test_policy_best_response_single_flow_is_soft_backward_induction(rng):
    game = random_game(rng, n_states=3, n_actions=2, horizon=4)
    alpha = 0.8
    initials = InitialSet(rng.dirichlet(np.ones(3), size=1), np.ones(1))
    flows = propagate_flow_set(game, Policy.uniform(game), initials)
    policy = best_response_policy(game, flows, [1.0], RiskParams(1.0, alpha), ENTROPY, tol=1e-11)
    v = np.zeros(3)
    for t in range(game.horizon - 1, -1, -1):
        mu = flows[0].states[t]
        Q = game.rewards(t, mu) + game.transitions(t, mu) @ v
        expected = np.apply_along_axis(lambda z: softmax(z / alpha), 1, Q)
        np.testing.assert_allclose(policy.probs[t], expected, atol=1e-9)
        v = (expected * Q).sum(axis=1)


def test_average_objective_uses_weighted_q(rng):
    game = random_game(rng, n_states=3, n_actions=2, horizon=3)
    initials = InitialSet(rng.dirichlet(np.ones(3), size=2), np.array([0.3, 0.7]))
    flows = propagate_flow_set(game, Policy.uniform(game), initials)
    params = RiskParams(1.0, 0.5)
    avg = best_response_policy(game, flows, initials.weights, params, ENTROPY, objective="average")
    risk = best_response_policy(game, flows, initials.weights, params, ENTROPY)
    assert avg.shape == risk.shape
    with pytest.raises(ContractViolation):
        best_response_policy(game, flows, initials.weights, params, ENTROPY, objective="max")


q_rows = st.integers(0, 2**32 - 1).map(lambda s: random_row_instance(np.random.default_rng(s)))


@settings(max_examples=80, deadline=None)
@given(q_rows, st.floats(-50, 50))
def test_translation_shifts_cost(instance, delta):
    q, w, tau, alpha = instance
    p = np.full(q.shape[1], 1.0 / q.shape[1])
    params = RiskParams(tau=tau, alpha=alpha)
    base = combined_cost(p, q, w, params, ENTROPY)
    shifted = combined_cost(p, q + delta, w, params, ENTROPY)
    assert shifted - base == pytest.approx(-delta, abs=1e-12 * max(1.0, abs(delta)) * 10)


@settings(max_examples=40, deadline=None)
@given(q_rows, st.floats(-5, 5))
def test_translation_leaves_best_response_unchanged(instance, delta):
    q, w, tau, alpha = instance
    params = RiskParams(tau=tau, alpha=alpha)
    p = best_response_row(q, w, params, ENTROPY, tol=1e-10)
    p2 = best_response_row(q + delta, w, params, ENTROPY, tol=1e-10)
    np.testing.assert_allclose(p, p2, atol=1e-8)


@settings(max_examples=40, deadline=None)
@given(q_rows)
def test_risk_cost_is_convex_along_segments(instance):
    q, w, tau, alpha = instance
    rng = np.random.default_rng(0)
    a, b = random_simplex(rng, q.shape[1]), random_simplex(rng, q.shape[1])
    params = RiskParams(tau=tau, alpha=alpha)
    for lam in (0.25, 0.5, 0.75):
        mid = combined_cost(lam * a + (1 - lam) * b, q, w, params, ENTROPY)
        chord = lam * combined_cost(a, q, w, params, ENTROPY) + \
            (1 - lam) * combined_cost(b, q, w, params, ENTROPY)
        assert mid <= chord + 1e-10
