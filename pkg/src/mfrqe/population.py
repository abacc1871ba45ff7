"""Finite-population Monte Carlo: empirical flows, returns and the
mean-field approximation gap.

Randomness is counter-based. Every draw is addressed by
``(seed, episode, t, purpose, agent)``: a Philox generator keyed on
``(seed, episode)`` is positioned at counter ``(t, purpose)`` and the
``agent``-th number of that block sequence is used. Results therefore do not
depend on how episodes are batched or scheduled.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .dp import backward_q
from .envs import EnvPreset
from .exceptions import ContractViolation
from .game import Policy, propagate_flow_set, tv_distance
from .risk import risk_cost
from .validation import check_positive_int

# draw purposes
_INIT, _ACTION, _MOVE, _PICK_MU0 = 0, 1, 2, 3


def _seed_key(seed):
    return int(np.random.SeedSequence(seed).generate_state(1, dtype=np.uint64)[0])


def stream_uniforms(seed, episode, t, purpose, n):
    """``n`` uniforms on ``[0, 1)`` for one ``(seed, episode, t, purpose)`` address."""
    key = np.array([_seed_key(seed), episode], dtype=np.uint64)
    counter = np.array([0, 0, purpose, t], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key, counter=counter)).random(n)


def _sample(cdf, u):
    """Inverse-CDF sampling; ``cdf`` is ``(..., n)``, ``u`` matches its batch shape."""
    idx = (u[..., None] >= cdf).sum(axis=-1)
    return np.minimum(idx, cdf.shape[-1] - 1)


def empirical_distribution(agent_states, n_states):
    """Fraction of agents in each state."""
    states = np.asarray(agent_states)
    if states.ndim != 1 or states.size == 0:
        raise ContractViolation("agent_states must be a non-empty vector")
    if np.any(states < 0) or np.any(states >= n_states):
        raise ContractViolation(f"agent state index outside [0, {n_states})")
    return np.bincount(states.astype(int), minlength=n_states) / states.size


@dataclass(frozen=True, eq=False)
class PopulationTrajectory:
    """One simulated episode of ``N`` agents."""

    states: np.ndarray            # (T + 1, N)
    actions: np.ndarray           # (T, N)
    empirical_flows: np.ndarray   # (T + 1, X)
    rewards: np.ndarray           # (T, N)
    seed: int
    episode: int = 0
    which_mu0: int = 0

    @property
    def n_agents(self):
        return self.states.shape[1]

    @property
    def returns(self):
        """Per-agent cumulative reward."""
        return self.rewards.sum(axis=0)

    def to_csv(self, fh):
        """Write rows ``episode,t,agent,state,action,reward``; the final time
        step has no action or reward."""
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["episode", "t", "agent", "state", "action", "reward"])
        T = self.actions.shape[0]
        for t in range(T + 1):
            for i in range(self.n_agents):
                if t < T:
                    writer.writerow([self.episode, t, i, int(self.states[t, i]),
                                     int(self.actions[t, i]), repr(float(self.rewards[t, i]))])
                else:
                    writer.writerow([self.episode, t, i, int(self.states[t, i]), "", ""])


def _pick_initials(preset, which_mu0, seed, episodes):
    K = preset.initials.K
    if which_mu0 is None:
        cdf = np.cumsum(preset.initials.weights)
        u = np.array([stream_uniforms(seed, e, 0, _PICK_MU0, 1)[0] for e in episodes])
        return _sample(np.broadcast_to(cdf, (len(episodes), K)), u)
    if not 0 <= which_mu0 < K:
        raise ContractViolation(f"which_mu0 {which_mu0} outside [0, {K})")
    return np.full(len(episodes), which_mu0, dtype=int)


def _simulate_batch(preset, policy, n_agents, ks, seed, episodes):
    """Simulate several episodes at once; returns states, actions, rewards and
    empirical flows, each with a leading episode axis."""
    game = preset.game
    T, X = game.horizon, game.n_states
    E, N = len(episodes), n_agents
    policy_cdf = np.cumsum(policy.probs, axis=-1)
    states = np.empty((E, T + 1, N), dtype=int)
    actions = np.empty((E, T, N), dtype=int)
    rewards = np.empty((E, T, N))
    emp = np.empty((E, T + 1, X))

    init_cdf = np.cumsum(preset.initials.initials[ks], axis=-1)    # (E, X)
    u = np.stack([stream_uniforms(seed, e, 0, _INIT, N) for e in episodes])
    states[:, 0] = _sample(init_cdf[:, None, :], u)
    rows = np.arange(E)[:, None]
    for t in range(T):
        x = states[:, t]
        emp[:, t] = np.stack([np.bincount(xe, minlength=X) / N for xe in x])
        u = np.stack([stream_uniforms(seed, e, t, _ACTION, N) for e in episodes])
        a = _sample(policy_cdf[t][x], u)
        actions[:, t] = a
        P = np.stack([game.transitions(t, emp[e, t]) for e in range(E)])
        R = np.stack([game.rewards(t, emp[e, t]) for e in range(E)])
        rewards[:, t] = R[rows, x, a]
        u = np.stack([stream_uniforms(seed, e, t, _MOVE, N) for e in episodes])
        states[:, t + 1] = _sample(np.cumsum(P[rows, x, a], axis=-1), u)
    emp[:, T] = np.stack([np.bincount(xe, minlength=X) / N for xe in states[:, T]])
    return states, actions, rewards, emp


def simulate_population(preset: EnvPreset, policy: Policy, n_agents, which_mu0=None,
                        seed=0, episode=0) -> PopulationTrajectory:
    """Simulate ``n_agents`` agents that all follow ``policy``.

    Agents start i.i.d. from the chosen initial distribution (sampled from
    the prior when ``which_mu0`` is ``None``) and interact only through the
    empirical state distribution, which drives both transitions and rewards.
    """
    check_positive_int(n_agents, "n_agents")
    ks = _pick_initials(preset, which_mu0, seed, [episode])
    states, actions, rewards, emp = _simulate_batch(preset, policy, n_agents, ks, seed, [episode])
    return PopulationTrajectory(states[0], actions[0], emp[0], rewards[0], seed, episode,
                                int(ks[0]))


@dataclass(frozen=True)
class MeanFieldGap:
    """Mean total-variation gap between empirical and limit flows."""

    n_agents: int
    n_episodes: int
    per_t_mean: np.ndarray     # (K, T + 1), averaged over episodes
    mean_gap: float            # average over k and t of per_t_mean
    max_gap: float             # max over k and t of per_t_mean
    return_gap: np.ndarray     # (K,) |empirical mean return - limit-flow expected return|
    risk_cost_gap: float       # |entropic risk of empirical returns - same for limit returns|


def mf_gap(preset: EnvPreset, policy: Policy, n_agents, n_episodes, seed=0,
           batch_size=256) -> MeanFieldGap:
    """Compare simulated empirical flows against the analytic flows.

    For every initial distribution ``k`` runs ``n_episodes`` populations of
    ``n_agents`` started from ``mu0^k`` and averages ``TV(empirical_t, mu_t)``.
    Also reports how far the population's mean return sits from the
    limit-flow value of the same policy, per initial distribution and through
    the preset's entropic risk over initial distributions.
    """
    check_positive_int(n_agents, "n_agents")
    check_positive_int(n_episodes, "n_episodes")
    game = preset.game
    flows = propagate_flow_set(game, policy, preset.initials)
    _, V = backward_q(game, policy, flows)
    K, T = preset.initials.K, game.horizon
    per_t = np.zeros((K, T + 1))
    return_gap = np.zeros(K)
    limit_values = np.zeros(K)
    empirical_values = np.zeros(K)
    for k in range(K):
        limit = flows[k].states
        limit_value = float(V.values[k, 0] @ preset.initials.initials[k])
        total_return = 0.0
        for lo in range(0, n_episodes, batch_size):
            episodes = range(k * n_episodes + lo, k * n_episodes + min(lo + batch_size, n_episodes))
            ks = np.full(len(episodes), k)
            _, _, rewards, emp = _simulate_batch(preset, policy, n_agents, ks, seed, episodes)
            per_t[k] += tv_distance(emp, limit[None]).sum(axis=0)
            total_return += rewards.sum(axis=1).mean(axis=1).sum()
        per_t[k] /= n_episodes
        limit_values[k] = limit_value
        empirical_values[k] = total_return / n_episodes
        return_gap[k] = abs(empirical_values[k] - limit_value)
    # losses are negated returns; one "action" so the row is the scalar 1
    w = preset.initials.weights
    risk_gap = abs(risk_cost([1.0], empirical_values[:, None], w, preset.tau)
                   - risk_cost([1.0], limit_values[:, None], w, preset.tau))
    return MeanFieldGap(n_agents, n_episodes, per_t, float(per_t.mean()), float(per_t.max()),
                        return_gap, float(risk_gap))


@dataclass(frozen=True)
class ReturnEstimate:
    mean: float
    stderr: float
    n_samples: int
    seed_means: tuple

    def __str__(self):
        return f"{self.mean:.3f} ± {self.stderr:.3f}"


def _limit_flow_returns(preset, policy, n_episodes, seed):
    game = preset.game
    T, X = game.horizon, game.n_states
    flows = propagate_flow_set(game, policy, preset.initials).array
    K = flows.shape[0]
    R = np.array([[game.rewards(t, flows[k, t]) for t in range(T)] for k in range(K)])
    P = np.array([[game.transitions(t, flows[k, t]) for t in range(T)] for k in range(K)])
    # a single batch id per seed; agent index = episode index within the batch
    ks = _sample(np.broadcast_to(np.cumsum(preset.initials.weights), (n_episodes, K)),
                 stream_uniforms(seed, 0, 0, _PICK_MU0, n_episodes))
    x = _sample(np.cumsum(preset.initials.initials, axis=-1)[ks],
                stream_uniforms(seed, 0, 0, _INIT, n_episodes))
    policy_cdf = np.cumsum(policy.probs, axis=-1)
    total = np.zeros(n_episodes)
    for t in range(T):
        a = _sample(policy_cdf[t][x], stream_uniforms(seed, 0, t, _ACTION, n_episodes))
        total += R[ks, t, x, a]
        x = _sample(np.cumsum(P[ks, t, x, a], axis=-1),
                    stream_uniforms(seed, 0, t, _MOVE, n_episodes))
    return total


def evaluate_returns(preset: EnvPreset, policy: Policy, n_episodes, n_seeds=1,
                     episodes_use_limit_flow=True, seed=0, n_agents=100) -> ReturnEstimate:
    """Mean cumulative reward and its standard error.

    In limit-flow mode each episode is one representative agent whose initial
    distribution is drawn from the prior and who faces the analytic flows.
    Otherwise each episode is a population of ``n_agents`` agents; agents in
    one episode are correlated through the shared empirical distribution, so
    the per-episode mean return is the sample.
    """
    check_positive_int(n_episodes, "n_episodes")
    check_positive_int(n_seeds, "n_seeds")
    samples = []
    for s in range(n_seeds):
        run_seed = seed + s
        if episodes_use_limit_flow:
            samples.append(_limit_flow_returns(preset, policy, n_episodes, run_seed))
        else:
            episodes = list(range(n_episodes))
            ks = _pick_initials(preset, None, run_seed, episodes)
            _, _, rewards, _ = _simulate_batch(preset, policy, n_agents, ks, run_seed, episodes)
            samples.append(rewards.sum(axis=1).mean(axis=1))
    values = np.concatenate(samples)
    n = values.size
    stderr = float(values.std(ddof=1) / np.sqrt(n)) if n > 1 else 0.0
    return ReturnEstimate(float(values.mean()), stderr, n,
                          tuple(float(s.mean()) for s in samples))
