"""Backward dynamic programming on a fixed set of mean-field flows."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import ContractViolation
from .game import FlowSet, GameSpec, Policy, _check_policy_for_game
from .validation import check_prob_vector


@dataclass(frozen=True, eq=False)
class QField:
    """State-action values, shape ``(K, T, X, U)``."""

    values: np.ndarray

    @property
    def K(self):
        return self.values.shape[0]


@dataclass(frozen=True, eq=False)
class VField:
    """State values, shape ``(K, T, X)``."""

    values: np.ndarray


def check_flows(game, flows):
    arr = flows.array
    if arr.shape[1:] != (game.horizon + 1, game.n_states):
        raise ContractViolation(
            f"flow shape {arr.shape[1:]} does not match game "
            f"(T+1={game.horizon + 1}, X={game.n_states})"
        )
    return arr


def stage_q(game: GameSpec, t, mu_slices, v_next):
    """One-step lookahead for every flow at time ``t``.

    ``mu_slices`` is ``(K, X)`` (each flow's distribution at ``t``) and
    ``v_next`` is ``(K, X)`` or ``None`` at the last stage. Returns the
    ``(K, X, U)`` array ``r_t + sum_y f_t(y|x,u) V_{t+1}(y)``.
    """
    K = mu_slices.shape[0]
    out = np.empty((K, game.n_states, game.n_actions))
    for k in range(K):
        out[k] = game.rewards(t, mu_slices[k])
        if v_next is not None:
            out[k] += game.transitions(t, mu_slices[k]) @ v_next[k]
    return out


def backward_q(game: GameSpec, policy: Policy, flows: FlowSet):
    """Evaluate ``policy`` against each flow by backward induction.

    Returns ``(QField, VField)``. The last stage's Q is the terminal reward.
    """
    _check_policy_for_game(game, policy)
    mu = check_flows(game, flows)
    K, T = flows.K, game.horizon
    Q = np.empty((K, T, game.n_states, game.n_actions))
    V = np.empty((K, T, game.n_states))
    v_next = None
    for t in range(T - 1, -1, -1):
        Q[:, t] = stage_q(game, t, mu[:, t], v_next)
        V[:, t] = np.einsum("kxu,xu->kx", Q[:, t], policy.probs[t])
        v_next = V[:, t]
    return QField(Q), VField(V)


def averaged_q(q: QField, weights) -> QField:
    """Prior-weighted average of per-flow Q tables, as a single-flow field."""
    vals = np.asarray(q.values, dtype=float)
    w = np.asarray(weights, dtype=float)
    if w.shape != (vals.shape[0],):
        raise ContractViolation(f"weights length {w.shape} does not match K={vals.shape[0]}")
    w = check_prob_vector(w, name="weights")
    return QField(np.tensordot(w, vals, axes=1)[None])


def policy_values(q: QField, policy: Policy) -> VField:
    """``V_t(x) = sum_u pi_t(u|x) Q_t(x, u)`` for each flow."""
    return VField(np.einsum("ktxu,txu->ktx", q.values, policy.probs))
