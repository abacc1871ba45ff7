import io

import numpy as np
import pytest

from mfrqe import (
    ContractViolation,
    Policy,
    empirical_distribution,
    evaluate_returns,
    make_from_config,
    mf_gap,
    simulate_population,
    solve_pi_avg,
)
from mfrqe.game import tv_distance
from mfrqe.population import _pick_initials, _simulate_batch, stream_uniforms

STAY = 2


def test_empirical_distribution_counts():
    np.testing.assert_array_equal(empirical_distribution([0, 0, 0, 0], 3), [1, 0, 0])
    np.testing.assert_array_equal(empirical_distribution([0, 0, 1, 2], 3), [0.5, 0.25, 0.25])
    with pytest.raises(ContractViolation):
        empirical_distribution([0, 3], 3)
    with pytest.raises(ContractViolation):
        empirical_distribution([], 3)


def test_single_agent_deviation_moves_at_most_one_over_n(rng):
    for n in (1, 7, 50):
        states = rng.integers(0, 4, size=n)
        moved = states.copy()
        moved[rng.integers(n)] = rng.integers(4)
        d = tv_distance(empirical_distribution(states, 4), empirical_distribution(moved, 4))
        assert d <= 1.0 / n + 1e-15


def test_stay_policy_single_agent_never_moves(congestion):
    stay = Policy.deterministic(congestion.game, STAY)
    traj = simulate_population(congestion, stay, n_agents=1, seed=3)
    assert np.all(traj.states == traj.states[0])


def test_point_mass_start_is_exact(congestion, congestion_rqe):
    traj = simulate_population(congestion, congestion_rqe.final_policy, 500, which_mu0=1, seed=0)
    np.testing.assert_array_equal(traj.empirical_flows[0], [1.0, 0, 0, 0])


def test_trajectory_invariants(congestion, congestion_rqe):
    n = 37
    traj = simulate_population(congestion, congestion_rqe.final_policy, n, seed=11)
    T = congestion.game.horizon
    assert traj.states.shape == (T + 1, n)
    assert traj.rewards.shape == (T, n)
    for t in range(T + 1):
        np.testing.assert_array_equal(traj.empirical_flows[t],
                                      empirical_distribution(traj.states[t], 4))
        counts = traj.empirical_flows[t] * n
        np.testing.assert_allclose(counts, np.round(counts), atol=1e-12)
    np.testing.assert_array_equal(traj.returns, traj.rewards.sum(axis=0))


def test_rewards_use_the_empirical_distribution(congestion, congestion_rqe):
    traj = simulate_population(congestion, congestion_rqe.final_policy, 20, seed=5)
    game = congestion.game
    for t in range(game.horizon):
        R = game.rewards(t, traj.empirical_flows[t])
        np.testing.assert_array_equal(traj.rewards[t], R[traj.states[t], traj.actions[t]])


def test_fixed_seed_is_bitwise_reproducible(congestion, congestion_rqe):
    a = simulate_population(congestion, congestion_rqe.final_policy, 64, seed=9, episode=2)
    b = simulate_population(congestion, congestion_rqe.final_policy, 64, seed=9, episode=2)
    c = simulate_population(congestion, congestion_rqe.final_policy, 64, seed=10, episode=2)
    np.testing.assert_array_equal(a.states, b.states)
    np.testing.assert_array_equal(a.rewards, b.rewards)
    assert not np.array_equal(a.states, c.states)


def test_batching_does_not_change_episodes(congestion, congestion_rqe):
    policy = congestion_rqe.final_policy
    episodes = [3, 4, 5]
    ks = _pick_initials(congestion, None, 1, episodes)
    batch_states = _simulate_batch(congestion, policy, 16, ks, 1, episodes)[0]
    for i, e in enumerate(episodes):
        single = simulate_population(congestion, policy, 16, seed=1, episode=e)
        np.testing.assert_array_equal(batch_states[i], single.states)


def test_streams_are_distinct_per_address():
    base = stream_uniforms(0, 0, 0, 0, 8)
    assert not np.array_equal(base, stream_uniforms(0, 0, 1, 0, 8))
    assert not np.array_equal(base, stream_uniforms(0, 0, 0, 1, 8))
    assert not np.array_equal(base, stream_uniforms(0, 1, 0, 0, 8))
    # the first draws of a longer request match a shorter one
    np.testing.assert_array_equal(base, stream_uniforms(0, 0, 0, 0, 20)[:8])


def test_trajectory_csv(congestion, congestion_rqe):
    traj = simulate_population(congestion, congestion_rqe.final_policy, 3, seed=0)
    buf = io.StringIO()
    traj.to_csv(buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "episode,t,agent,state,action,reward"
    assert len(lines) == 1 + (congestion.game.horizon + 1) * 3


def _deterministic_preset():
    return make_from_config({
        "horizon": 3,
        "transition": [[[0.0, 1.0], [1.0, 0.0]], [[0.0, 1.0], [1.0, 0.0]]],
        "reward": [[0.0, 0.0], [0.0, 0.0]],
        "initials": [[1.0, 0.0], [0.0, 1.0]],
        "weights": [0.5, 0.5],
    })


def test_deterministic_setting_has_zero_gap():
    preset = _deterministic_preset()
    policy = Policy(np.tile([1.0, 0.0], (3, 2, 1)))
    gap = mf_gap(preset, policy, n_agents=10, n_episodes=5)
    assert gap.max_gap == 0.0
    np.testing.assert_array_equal(gap.per_t_mean, 0.0)


def test_zero_reward_returns_are_exactly_zero():
    preset = _deterministic_preset()
    policy = Policy.uniform(preset.game)
    est = evaluate_returns(preset, policy, 100, n_seeds=2)
    assert est.mean == 0.0 and est.stderr == 0.0
    pop = evaluate_returns(preset, policy, 5, episodes_use_limit_flow=False, n_agents=4)
    assert pop.mean == 0.0 and pop.n_samples == 5


def test_single_agent_gap_is_bounded(congestion, congestion_rqe):
    gap = mf_gap(congestion, congestion_rqe.final_policy, 1, 50)
    assert gap.max_gap <= 1.0


def test_limit_flow_returns_match_exact_value(congestion, congestion_rqe):
    from mfrqe import backward_q
    policy = congestion_rqe.final_policy
    _, V = backward_q(congestion.game, policy, congestion_rqe.final_flows)
    exact = float(congestion.weights @ np.einsum("kx,kx->k", V.values[:, 0],
                                                 congestion.initials.initials))
    est = evaluate_returns(congestion, policy, 20_000, n_seeds=2, seed=1)
    assert abs(est.mean - exact) < 4 * est.stderr


def test_averaged_and_equilibrium_returns_are_close(congestion, congestion_rqe):
    avg = solve_pi_avg(congestion)
    a = evaluate_returns(congestion, avg, 10_000, n_seeds=5)
    b = evaluate_returns(congestion, congestion_rqe.final_policy, 10_000, n_seeds=5)
    assert abs(a.mean - b.mean) < 0.01


def test_population_returns_approach_limit_returns(congestion, congestion_rqe):
    policy = congestion_rqe.final_policy
    small = mf_gap(congestion, policy, 16, 300, seed=2)
    large = mf_gap(congestion, policy, 256, 300, seed=2)
    assert np.all(large.return_gap < small.return_gap)
    assert large.return_gap.max() < 0.05
    assert large.risk_cost_gap < small.risk_cost_gap


def test_invalid_arguments(congestion, congestion_rqe):
    with pytest.raises(ContractViolation):
        simulate_population(congestion, congestion_rqe.final_policy, 0)
    with pytest.raises(ContractViolation):
        simulate_population(congestion, congestion_rqe.final_policy, 5, which_mu0=7)
    with pytest.raises(ContractViolation):
        evaluate_returns(congestion, congestion_rqe.final_policy, 0)
