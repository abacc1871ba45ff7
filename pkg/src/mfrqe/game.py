"""Core domain types and the deterministic mean-field propagator.

A game is described by two vectorized evaluators:

* ``transition(t, mu)`` returning an ``(n_states, n_actions, n_states)``
  array whose entry ``[x, u, y]`` is the probability of moving from ``x`` to
  ``y`` under action ``u`` when the population is distributed as ``mu``;
* ``reward(t, mu)`` returning an ``(n_states, n_actions)`` array.

Per-entry access (``GameSpec.transition_row`` / ``GameSpec.reward_at``) is
available for callers that think in terms of single ``(t, x, u, mu)`` probes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .exceptions import ContractViolation, ModelError
from .validation import (
    DRIFT_TOL,
    PROB_TOL,
    check_positive,
    check_positive_int,
    check_prob_vector,
    check_stochastic_rows,
    renormalize,
)

FORMAT_VERSION = 1

TransitionFn = Callable[[int, np.ndarray], np.ndarray]
RewardFn = Callable[[int, np.ndarray], np.ndarray]


def _frozen(arr):
    arr = np.array(arr, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class GameSpec:
    """Finite-horizon mean-field game with finite state and action sets."""

    n_states: int
    n_actions: int
    horizon: int
    transition_fn: TransitionFn
    reward_fn: RewardFn
    r_max: float
    state_labels: Optional[Sequence[str]] = None
    action_labels: Optional[Sequence[str]] = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        check_positive_int(self.n_states, "n_states")
        check_positive_int(self.n_actions, "n_actions")
        check_positive_int(self.horizon, "horizon")
        check_positive(self.r_max, "r_max")
        if self.state_labels is not None and len(self.state_labels) != self.n_states:
            raise ContractViolation("state_labels length must equal n_states")
        if self.action_labels is not None and len(self.action_labels) != self.n_actions:
            raise ContractViolation("action_labels length must equal n_actions")

    def _check_time(self, t):
        if not 0 <= t < self.horizon:
            raise ContractViolation(f"time index {t} outside [0, {self.horizon})")

    def transitions(self, t, mu):
        """Validated ``(X, U, X)`` transition tensor at time ``t``.

        Rows are renormalized so downstream propagation only sees rounding
        drift; rows off the simplex by more than ``1e-9`` raise ``ModelError``.
        """
        self._check_time(t)
        P = np.asarray(self.transition_fn(t, mu), dtype=float)
        shape = (self.n_states, self.n_actions, self.n_states)
        if P.shape != shape:
            raise ModelError(f"transition at t={t} has shape {P.shape}, expected {shape}")
        bad = ~np.isfinite(P).all(axis=-1) | (P < 0).any(axis=-1)
        bad |= np.abs(P.sum(axis=-1) - 1.0) > PROB_TOL
        if bad.any():
            x, u = (int(i) for i in np.argwhere(bad)[0])
            raise ModelError(
                f"transition row at (t={t}, x={x}, u={u}) is not a probability "
                f"vector: {P[x, u]}"
            )
        return P / P.sum(axis=-1, keepdims=True)

    def rewards(self, t, mu):
        """Validated ``(X, U)`` reward table at time ``t``."""
        self._check_time(t)
        R = np.asarray(self.reward_fn(t, mu), dtype=float)
        shape = (self.n_states, self.n_actions)
        if R.shape != shape:
            raise ModelError(f"reward at t={t} has shape {R.shape}, expected {shape}")
        bad = ~np.isfinite(R) | (np.abs(R) > self.r_max * (1 + 1e-12))
        if bad.any():
            x, u = (int(i) for i in np.argwhere(bad)[0])
            raise ModelError(
                f"reward at (t={t}, x={x}, u={u}) = {R[x, u]!r} exceeds r_max={self.r_max}"
            )
        return R

    def transition_row(self, t, x, u, mu):
        return self.transitions(t, mu)[x, u]

    def reward_at(self, t, x, u, mu):
        return float(self.rewards(t, mu)[x, u])

    @property
    def is_surrogate(self):
        return bool(self.metadata.get("surrogate_dynamics", False))


@dataclass(frozen=True, eq=False)
class Policy:
    """Time-indexed Markov policy; ``probs[t, x]`` is the action distribution."""

    probs: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.probs, dtype=float)
        if arr.ndim != 3:
            raise ContractViolation(f"policy must be (T, X, U), got shape {arr.shape}")
        check_stochastic_rows(arr, name="policy")
        object.__setattr__(self, "probs", _frozen(arr))

    @classmethod
    def uniform(cls, game: GameSpec) -> "Policy":
        return cls(np.full((game.horizon, game.n_states, game.n_actions), 1.0 / game.n_actions))

    @classmethod
    def deterministic(cls, game: GameSpec, action) -> "Policy":
        """Policy that always plays ``action`` (an index, or a (T, X) index array)."""
        idx = np.broadcast_to(np.asarray(action), (game.horizon, game.n_states))
        probs = np.zeros((game.horizon, game.n_states, game.n_actions))
        np.put_along_axis(probs, idx[..., None], 1.0, axis=-1)
        return cls(probs)

    @property
    def horizon(self):
        return self.probs.shape[0]

    @property
    def n_states(self):
        return self.probs.shape[1]

    @property
    def n_actions(self):
        return self.probs.shape[2]

    @property
    def shape(self):
        return self.probs.shape

    def row(self, t, x):
        return self.probs[t, x]

    def to_dict(self):
        return {
            "format_version": FORMAT_VERSION,
            "kind": "policy",
            "shape": list(self.shape),
            "probs": self.probs.tolist(),
        }

    @classmethod
    def from_dict(cls, data):
        _check_format(data, "policy")
        arr = np.asarray(data["probs"], dtype=float)
        if list(arr.shape) != list(data["shape"]):
            raise ContractViolation(f"declared shape {data['shape']} != data shape {arr.shape}")
        return cls(arr)

    def __eq__(self, other):
        return isinstance(other, Policy) and np.array_equal(self.probs, other.probs)

    __hash__ = None


@dataclass(frozen=True, eq=False)
class InitialSet:
    """Finite set of initial distributions with their prior weights."""

    initials: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        init = np.asarray(self.initials, dtype=float)
        if init.ndim != 2 or init.shape[0] < 1:
            raise ContractViolation(f"initials must be a (K, X) array with K >= 1, got {init.shape}")
        for k, mu0 in enumerate(init):
            check_prob_vector(mu0, name=f"initial distribution {k}")
        w = check_prob_vector(self.weights, n=init.shape[0], name="initial weights")
        # exact renormalization so downstream weighted sums see a clean simplex
        object.__setattr__(self, "initials", _frozen(init / init.sum(axis=1, keepdims=True)))
        object.__setattr__(self, "weights", _frozen(w / w.sum()))

    @property
    def K(self):
        return self.initials.shape[0]

    @property
    def n_states(self):
        return self.initials.shape[1]

    def __len__(self):
        return self.K

    def subset(self, indices):
        """Sub-collection with renormalized weights."""
        idx = list(indices)
        w = self.weights[idx]
        if w.sum() <= 0:
            w = np.full(len(idx), 1.0 / len(idx))
        return InitialSet(self.initials[idx], w / w.sum())

    def singleton(self, k):
        """Just the ``k``-th initial distribution, with weight one."""
        if not 0 <= k < self.K:
            raise ContractViolation(f"initial index {k} outside [0, {self.K})")
        return InitialSet(self.initials[[k]], np.ones(1))

    def to_dict(self):
        return {
            "format_version": FORMAT_VERSION,
            "kind": "initial_set",
            "initials": self.initials.tolist(),
            "weights": self.weights.tolist(),
        }


@dataclass(frozen=True, eq=False)
class MeanFieldFlow:
    """Deterministic state distributions ``mu_0 .. mu_T`` (``T + 1`` slices)."""

    states: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.states, dtype=float)
        if arr.ndim != 2:
            raise ContractViolation(f"flow must be (T+1, X), got shape {arr.shape}")
        check_stochastic_rows(arr, name="flow")
        object.__setattr__(self, "states", _frozen(arr))

    @property
    def horizon(self):
        return self.states.shape[0] - 1

    @property
    def initial(self):
        return self.states[0]

    def __getitem__(self, t):
        return self.states[t]


@dataclass(frozen=True, eq=False)
class FlowSet:
    """One mean-field flow per initial distribution, in index order."""

    flows: tuple

    def __post_init__(self):
        flows = tuple(self.flows)
        if not flows:
            raise ContractViolation("a flow set needs at least one flow")
        shape = flows[0].states.shape
        if any(f.states.shape != shape for f in flows):
            raise ContractViolation("all flows in a set must share a shape")
        object.__setattr__(self, "flows", flows)

    @property
    def K(self):
        return len(self.flows)

    def __len__(self):
        return len(self.flows)

    def __getitem__(self, k):
        return self.flows[k]

    def __iter__(self):
        return iter(self.flows)

    @property
    def array(self):
        """``(K, T + 1, X)`` view of all flows."""
        return np.stack([f.states for f in self.flows])

    def to_dict(self):
        arr = self.array
        return {
            "format_version": FORMAT_VERSION,
            "kind": "flow_set",
            "shape": list(arr.shape),
            "flows": arr.tolist(),
        }

    @classmethod
    def from_dict(cls, data):
        _check_format(data, "flow_set")
        arr = np.asarray(data["flows"], dtype=float)
        if list(arr.shape) != list(data["shape"]):
            raise ContractViolation(f"declared shape {data['shape']} != data shape {arr.shape}")
        return cls(tuple(MeanFieldFlow(a) for a in arr))


def _check_format(data, kind):
    if data.get("kind") != kind:
        raise ContractViolation(f"expected a serialized {kind}, got {data.get('kind')!r}")
    if data.get("format_version") != FORMAT_VERSION:
        raise ContractViolation(f"unsupported format_version {data.get('format_version')!r}")


def _check_policy_for_game(game, policy):
    if policy.shape != (game.horizon, game.n_states, game.n_actions):
        raise ContractViolation(
            f"policy shape {policy.shape} does not match game "
            f"(T={game.horizon}, X={game.n_states}, U={game.n_actions})"
        )


def state_kernel(policy_t, P):
    """Policy-averaged ``(X, X)`` state kernel ``sum_u pi(u|x) P[x, u, :]``."""
    return np.einsum("xu,xuy->xy", policy_t, P)


def propagate_flow(game: GameSpec, policy: Policy, mu0) -> MeanFieldFlow:
    """Push ``mu0`` forward under ``policy`` for ``T`` steps."""
    _check_policy_for_game(game, policy)
    mu0 = check_prob_vector(mu0, n=game.n_states, name="mu0")
    out = np.empty((game.horizon + 1, game.n_states))
    out[0] = mu0
    mu = mu0
    for t in range(game.horizon):
        M = state_kernel(policy.probs[t], game.transitions(t, mu))
        mu = renormalize(mu @ M, drift=DRIFT_TOL, error=ModelError,
                         what=f"flow slice {t + 1}")
        out[t + 1] = mu
    return MeanFieldFlow(out)


def propagate_flow_set(game: GameSpec, policy: Policy, initials: InitialSet) -> FlowSet:
    if initials.n_states != game.n_states:
        raise ContractViolation(
            f"initial distributions have {initials.n_states} states, game has {game.n_states}"
        )
    return FlowSet(tuple(propagate_flow(game, policy, mu0) for mu0 in initials.initials))


def tv_distance(p, q):
    """Total-variation distance along the last axis."""
    return 0.5 * np.abs(np.asarray(p) - np.asarray(q)).sum(axis=-1)


def flow_distance(a: FlowSet, b: FlowSet) -> float:
    """Largest total-variation gap between matching slices of two flow sets."""
    A, B = a.array, b.array
    if A.shape != B.shape:
        raise ContractViolation(f"flow set shape mismatch: {A.shape} vs {B.shape}")
    return float(tv_distance(A, B).max())


def policy_distance(a: Policy, b: Policy) -> float:
    """Largest total-variation gap between matching policy rows."""
    if a.shape != b.shape:
        raise ContractViolation(f"policy shape mismatch: {a.shape} vs {b.shape}")
    return float(tv_distance(a.probs, b.probs).max())
