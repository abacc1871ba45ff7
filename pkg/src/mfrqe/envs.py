"""Built-in environments and their solver presets.

``congestion`` has fully specified dynamics. ``sis`` and the five benchmark
games (``beach_bar``, ``treasure``, ``linear_quadratic``, ``random_linear``,
``rps``) come with their standard initial-distribution sets and
hyperparameters but run on surrogate dynamics defined here. Their
``game.metadata["surrogate_dynamics"]`` flag is set so reports can tell them
apart.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

import numpy as np

from .exceptions import ConfigError, UsageError
from .game import GameSpec, InitialSet
from .risk import RegularizerSpec, RiskParams, make_regularizer
from .validation import PROB_TOL, check_positive, check_positive_int, check_unit_interval

#: default averaging weight for fictitious play
DEFAULT_FP_BETA = 0.5

# (T, alpha, tau, iterations) per regularizer
HYPERPARAMS = {
    "entropy": {
        "sis": (50, 5.0, 0.2, 25),
        "congestion": (5, 15.0, 0.0667, 30),
        "beach_bar": (2, 2.0, 0.5, 15),
        "treasure": (5, 1.5, 0.6667, 10),
        "linear_quadratic": (3, 1.0, 1.0, 10),
        "random_linear": (3, 28.0, 0.0357, 10),
        "rps": (7, 10.0, 0.1, 15),
    },
    "log_barrier": {
        "sis": (50, 5.0, 0.2, 25),
        "congestion": (5, 6.0, 0.1667, 30),
        "beach_bar": (2, 2.0, 0.5, 15),
        "treasure": (5, 4.0, 0.25, 10),
        "linear_quadratic": (3, 1.0, 1.0, 10),
        "random_linear": (3, 40.0, 0.025, 10),
        "rps": (7, 10.0, 0.1, 15),
    },
}

INITIAL_SETS = {
    "congestion": (
        [[0.25, 0.25, 0.25, 0.25], [1, 0, 0, 0], [0.1, 0.5, 0.2, 0.2], [0, 0.6, 0.4, 0]],
        [0.4, 0.1, 0.3, 0.2],
    ),
    "sis": (
        [[1, 0], [0.5, 0.5], [0, 1], [0.8, 0.2]],
        [0.3, 0.2, 0.2, 0.3],
    ),
    "beach_bar": (
        [[0.3, 0.2, 0.1, 0.4], [0.3, 0.3, 0.1, 0.3], [0.2, 0.2, 0.1, 0.5],
         [0.25, 0.1, 0.25, 0.4], [0, 0, 0, 1]],
        [0.25, 0.25, 0.2, 0.2, 0.1],
    ),
    "treasure": (
        [[0.40, 0.35, 0.25], [0.41, 0.34, 0.25], [0.39, 0.36, 0.25], [0.41, 0.35, 0.24],
         [0.39, 0.35, 0.26], [0.40, 0.36, 0.24], [0.40, 0.34, 0.26], [0.405, 0.355, 0.24],
         [0.39, 0.355, 0.255], [0.405, 0.34, 0.255]],
        [0.1] * 10,
    ),
    "linear_quadratic": (
        [[0.09] * 10 + [0.10],
         [0.19] + [0.09] * 9 + [0.00],
         [0.09, 0.18] + [0.09] * 7 + [0.01, 0.09]],
        [0.5, 0.3, 0.2],
    ),
    "random_linear": (
        [[0.2, 0.2, 0.2, 0.2, 0.2], [0.8, 0.05, 0.05, 0.05, 0.05],
         [0.05, 0.8, 0.05, 0.05, 0.05], [0.5, 0.5, 0, 0, 0], [0.4, 0.3, 0.3, 0, 0],
         [0.1, 0.2, 0.3, 0.2, 0.2], [0.4, 0.25, 0.15, 0.1, 0.1], [0, 0.6, 0.2, 0.1, 0.1]],
        [0.12, 0.08, 0.15, 0.10, 0.20, 0.05, 0.18, 0.12],
    ),
    "rps": (
        [[1, 0, 0, 0], [0.9, 0.1, 0, 0], [0.8, 0.1, 0.1, 0], [0.7, 0.1, 0.1, 0.1],
         [0.4, 0.3, 0.2, 0.1]],
        [0.4, 0.25, 0.15, 0.1, 0.1],
    ),
}

SURROGATES = ("beach_bar", "treasure", "linear_quadratic", "random_linear", "rps")
PRESET_NAMES = ("congestion", "sis") + SURROGATES


@dataclass(frozen=True, eq=False)
class EnvPreset:
    """A game bundled with its initial-distribution set and solver settings."""

    name: str
    game: GameSpec
    initials: InitialSet
    alpha: float
    tau: float
    fpi_iterations: int
    fictitious_beta: float
    regularizer: RegularizerSpec
    seed: int = 0
    description: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.initials.n_states != self.game.n_states:
            raise ConfigError(
                f"initial distributions have {self.initials.n_states} states, "
                f"game has {self.game.n_states}"
            )
        check_positive(self.alpha, "alpha")
        check_positive(self.tau, "tau")
        check_positive_int(self.fpi_iterations, "fpi_iterations")
        check_unit_interval(self.fictitious_beta, "fictitious_beta")
        object.__setattr__(self, "regularizer", make_regularizer(self.regularizer))

    @property
    def risk_params(self):
        return RiskParams(tau=self.tau, alpha=self.alpha)

    @property
    def weights(self):
        return self.initials.weights

    @property
    def is_surrogate(self):
        return self.game.is_surrogate

    def with_params(self, **changes):
        """Copy with some of ``alpha``, ``tau``, ``fpi_iterations``,
        ``fictitious_beta``, ``regularizer``, ``initials`` replaced."""
        return dataclasses.replace(self, **changes)

    def export(self):
        """Full parameterization as a JSON-compatible dict."""
        return {
            "format_version": 1,
            "kind": "env_preset",
            "name": self.name,
            "seed": self.seed,
            "surrogate_dynamics": self.is_surrogate,
            "n_states": self.game.n_states,
            "n_actions": self.game.n_actions,
            "horizon": self.game.horizon,
            "r_max": self.game.r_max,
            "state_labels": list(self.game.state_labels or []),
            "action_labels": list(self.game.action_labels or []),
            "alpha": self.alpha,
            "tau": self.tau,
            "fpi_iterations": self.fpi_iterations,
            "fictitious_beta": self.fictitious_beta,
            "regularizer": self.regularizer.kind,
            "initials": self.initials.initials.tolist(),
            "weights": self.initials.weights.tolist(),
            "description": self.description,
        }

    def export_json(self, indent=2):
        return json.dumps(self.export(), indent=indent)


def _preset(name, game, regularizer, seed=0, description=None, beta=DEFAULT_FP_BETA):
    reg = make_regularizer(regularizer)
    T, alpha, tau, iters = HYPERPARAMS[reg.kind][name]
    assert game.horizon == T
    initials, weights = INITIAL_SETS[name]
    return EnvPreset(
        name=name,
        game=game,
        initials=InitialSet(np.asarray(initials, dtype=float), np.asarray(weights, dtype=float)),
        alpha=alpha,
        tau=tau,
        fpi_iterations=iters,
        fictitious_beta=beta,
        regularizer=reg,
        seed=seed,
        description=description or {},
    )


def _static(table):
    table = np.asarray(table, dtype=float)
    table.setflags(write=False)
    return lambda t, mu: table


def _line_moves(n_states, slip=0.0):
    """Transitions for LEFT/RIGHT/STAY on a line; edges clamp. With ``slip``
    the intended move fails and the agent stays put."""
    P = np.zeros((n_states, 3, n_states))
    for x in range(n_states):
        for u, dx in enumerate((-1, 1, 0)):
            y = min(max(x + dx, 0), n_states - 1)
            P[x, u, y] += 1.0 - slip
            P[x, u, x] += slip
    return P


LEFT, RIGHT, STAY = 0, 1, 2


def make_congestion(regularizer="entropy") -> EnvPreset:
    """Four cells on a line; crowding is penalized, moving costs 0.1."""
    P = _line_moves(4)
    move_cost = np.array([0.1, 0.1, 0.0])

    def reward(t, mu):
        return -2.0 * np.asarray(mu)[:, None] - move_cost[None, :]

    game = GameSpec(
        n_states=4, n_actions=3, horizon=5,
        transition_fn=_static(P), reward_fn=reward, r_max=2.1,
        state_labels=["0", "1", "2", "3"], action_labels=["LEFT", "RIGHT", "STAY"],
        metadata={"surrogate_dynamics": False, "mu_independent_transitions": True},
    )
    return _preset("congestion", game, regularizer,
                   description={"boundary": "moves off the grid clamp in place"})


SUSCEPTIBLE, INFECTED = 0, 1
GO_OUT, DISTANCE = 0, 1


def make_sis(regularizer="entropy", infection_rate=0.8, recovery_rate=0.3) -> EnvPreset:
    """Susceptible/infected epidemic game on surrogate dynamics.

    A susceptible agent going out is infected with probability
    ``infection_rate * mu(I)``; distancing blocks infection. Infected agents
    recover with probability ``recovery_rate`` regardless of action.
    Reward is ``-1`` while infected and ``-0.5`` for distancing.
    """

    def transition(t, mu):
        p_inf = infection_rate * float(mu[INFECTED])
        P = np.empty((2, 2, 2))
        P[SUSCEPTIBLE, GO_OUT] = [1.0 - p_inf, p_inf]
        P[SUSCEPTIBLE, DISTANCE] = [1.0, 0.0]
        P[INFECTED, :] = [recovery_rate, 1.0 - recovery_rate]
        return P

    R = np.array([[0.0, -0.5], [-1.0, -1.5]])
    game = GameSpec(
        n_states=2, n_actions=2, horizon=50,
        transition_fn=transition, reward_fn=_static(R), r_max=1.5,
        state_labels=["S", "I"], action_labels=["GO_OUT", "DISTANCE"],
        metadata={"surrogate_dynamics": True},
    )
    return _preset("sis", game, regularizer, description={
        "dynamics": "surrogate",
        "infection_rate": infection_rate,
        "recovery_rate": recovery_rate,
    })


def _beach_bar(seed):
    n, bar = 4, 2
    P = _line_moves(n, slip=0.1)
    move_cost = np.array([0.1, 0.1, 0.0])
    closeness = 1.0 - np.abs(np.arange(n) - bar) / (n - 1)

    def reward(t, mu):
        return (closeness - np.asarray(mu))[:, None] - move_cost[None, :]

    return GameSpec(
        n_states=n, n_actions=3, horizon=2,
        transition_fn=_static(P), reward_fn=reward, r_max=2.1,
        action_labels=["LEFT", "RIGHT", "STAY"],
        metadata={"surrogate_dynamics": True, "mu_independent_transitions": True},
    )


def _treasure(seed):
    # actions pick the cell to dig in next; treasure is split with whoever is there
    value = np.array([1.0, 0.8, 0.6])
    P = np.zeros((3, 3, 3))
    for x in range(3):
        for u in range(3):
            P[x, u, u] = 1.0
    switch_cost = 0.05 * (1.0 - np.eye(3))

    def reward(t, mu):
        return (value * (1.0 - np.asarray(mu)))[:, None] - switch_cost

    return GameSpec(
        n_states=3, n_actions=3, horizon=5,
        transition_fn=_static(P), reward_fn=reward, r_max=1.05,
        metadata={"surrogate_dynamics": True, "mu_independent_transitions": True},
    )


def _linear_quadratic(seed):
    n = 11
    z = np.linspace(-1.0, 1.0, n)
    P = _line_moves(n, slip=0.1)
    effort = np.array([0.1, 0.1, 0.0])

    def reward(t, mu):
        m = float(np.asarray(mu) @ z)
        return -0.5 * (z - m)[:, None] ** 2 - effort[None, :]

    return GameSpec(
        n_states=n, n_actions=3, horizon=3,
        transition_fn=_static(P), reward_fn=reward, r_max=2.1,
        action_labels=["LEFT", "RIGHT", "STAY"],
        metadata={"surrogate_dynamics": True, "mu_independent_transitions": True},
    )


def _random_linear(seed):
    n, m, T = 5, 3, 3
    rng = np.random.default_rng(seed)
    raw = rng.uniform(0.05, 1.0, size=(T, n, m, n))
    P = raw / raw.sum(axis=-1, keepdims=True)
    base = rng.uniform(-1.0, 1.0, size=(n, m))
    coupling = rng.uniform(-1.0, 1.0, size=(n, n))
    P.setflags(write=False)

    def transition(t, mu):
        return P[t]

    def reward(t, mu):
        return 0.5 * base + 0.5 * (coupling @ np.asarray(mu))[:, None]

    return GameSpec(
        n_states=n, n_actions=m, horizon=T,
        transition_fn=transition, reward_fn=reward, r_max=1.0,
        metadata={"surrogate_dynamics": True, "mu_independent_transitions": True,
                  "seed": seed},
    )


def _rps(seed):
    # state 0 is the lobby; every action moves the agent to the matching hand.
    # Rock beating scissors pays double, otherwise uniform play would be an
    # exact equilibrium and the game would be trivial.
    payoff = np.array([[0.0, -1.0, 2.0], [1.0, 0.0, -1.0], [-1.0, 1.0, 0.0]])
    P = np.zeros((4, 3, 4))
    for x in range(4):
        for u in range(3):
            P[x, u, u + 1] = 1.0

    def reward(t, mu):
        mu = np.asarray(mu)
        r = np.zeros((4, 3))
        r[1:] = (1.0 + 0.5 * payoff @ mu[1:])[:, None]
        return r

    return GameSpec(
        n_states=4, n_actions=3, horizon=7,
        transition_fn=_static(P), reward_fn=reward, r_max=2.0,
        state_labels=["lobby", "R", "P", "S"], action_labels=["R", "P", "S"],
        metadata={"surrogate_dynamics": True, "mu_independent_transitions": True},
    )


_SURROGATE_BUILDERS = {
    "beach_bar": _beach_bar,
    "treasure": _treasure,
    "linear_quadratic": _linear_quadratic,
    "random_linear": _random_linear,
    "rps": _rps,
}


def make_surrogate(name, seed=0, regularizer="entropy") -> EnvPreset:
    """One of the benchmark games, on the surrogate dynamics defined here."""
    try:
        builder = _SURROGATE_BUILDERS[name]
    except KeyError:
        raise UsageError(
            f"unknown surrogate environment {name!r}; valid names: {', '.join(SURROGATES)}"
        ) from None
    return _preset(name, builder(seed), regularizer, seed=seed,
                   description={"dynamics": "surrogate"})


def make_preset(name, seed=0, regularizer="entropy") -> EnvPreset:
    """Any built-in preset by name."""
    if name == "congestion":
        return make_congestion(regularizer)
    if name == "sis":
        return make_sis(regularizer)
    if name in _SURROGATE_BUILDERS:
        return make_surrogate(name, seed=seed, regularizer=regularizer)
    raise UsageError(f"unknown environment {name!r}; valid names: {', '.join(PRESET_NAMES)}")


def _table(spec, name, ndim_options):
    arr = np.asarray(spec[name], dtype=float)
    declared = spec.get(f"{name}_shape")
    if declared is not None and list(arr.shape) != list(declared):
        raise ConfigError(f"{name}: declared shape {list(declared)} != actual {list(arr.shape)}")
    if arr.ndim not in ndim_options:
        raise ConfigError(f"{name}: expected {ndim_options} dimensions, got shape {arr.shape}")
    return arr


def make_from_config(tables) -> EnvPreset:
    """Preset from explicit tables.

    ``tables`` is a mapping with keys

    * ``transition``: ``(X, U, X)`` or time-indexed ``(T, X, U, X)`` base table;
    * ``reward``: ``(X, U)`` or ``(T, X, U)``;
    * ``horizon``, ``initials`` (``(K, X)``), ``weights`` (``K``);
    * optional ``transition_alt`` (same shape as ``transition``),
      ``coupling_state`` (int) and ``coupling_weight`` (float): the effective
      kernel is ``base + coupling_weight * mu[coupling_state] * (alt - base)``;
    * optional ``reward_mu`` ``(X, U, X)``: adds ``reward_mu[x, u] @ mu``;
    * optional ``r_max`` (defaults to the largest achievable ``|reward|``),
      ``alpha``, ``tau``, ``iterations``, ``beta``, ``regularizer``, ``name``.
    """
    spec = dict(tables)
    for key in ("transition", "reward", "horizon", "initials", "weights"):
        if key not in spec:
            raise ConfigError(f"environment tables are missing '{key}'")
    horizon = spec["horizon"]
    if isinstance(horizon, bool) or not isinstance(horizon, int) or horizon < 1:
        raise ConfigError(f"horizon must be a positive integer, got {horizon!r}")

    base = _table(spec, "transition", (3, 4))
    if base.ndim == 3:
        base = np.broadcast_to(base, (horizon,) + base.shape)
    if base.shape[0] != horizon:
        raise ConfigError(f"transition has {base.shape[0]} time slices, horizon is {horizon}")
    _, X, U, X2 = base.shape
    if X != X2:
        raise ConfigError(f"transition must be (X, U, X), got {base.shape[1:]}")
    _check_stochastic_table(base, "transition")

    alt = None
    if "transition_alt" in spec:
        alt = np.asarray(spec["transition_alt"], dtype=float)
        if alt.ndim == 3:
            alt = np.broadcast_to(alt, (horizon,) + alt.shape)
        if alt.shape != base.shape:
            raise ConfigError(f"transition_alt shape {alt.shape} != transition shape {base.shape}")
        _check_stochastic_table(alt, "transition_alt")
    c_state = int(spec.get("coupling_state", 0))
    c_weight = float(spec.get("coupling_weight", 0.0))
    if alt is not None:
        if not 0 <= c_state < X:
            raise ConfigError(f"coupling_state {c_state} outside [0, {X})")
        if not 0.0 <= c_weight <= 1.0:
            raise ConfigError(f"coupling_weight must lie in [0, 1], got {c_weight}")

    R = _table(spec, "reward", (2, 3))
    if R.ndim == 2:
        R = np.broadcast_to(R, (horizon,) + R.shape)
    if R.shape != (horizon, X, U):
        raise ConfigError(f"reward shape {R.shape} does not match (T, X, U)=({horizon}, {X}, {U})")
    if not np.all(np.isfinite(R)):
        raise ConfigError("reward table has non-finite entries")
    R_mu = None
    if "reward_mu" in spec:
        R_mu = np.asarray(spec["reward_mu"], dtype=float)
        if R_mu.shape != (X, U, X):
            raise ConfigError(f"reward_mu shape {R_mu.shape} != (X, U, X)=({X}, {U}, {X})")
    bound = np.abs(R).max(axis=0) + (np.abs(R_mu).max(axis=-1) if R_mu is not None else 0.0)
    r_max = float(spec.get("r_max", max(float(bound.max()), 1e-12)))
    if r_max <= 0:
        raise ConfigError(f"r_max must be positive, got {r_max}")
    over = np.argwhere(np.abs(R) > r_max)
    if over.size:
        t, x, u = (int(i) for i in over[0])
        raise ConfigError(f"reward at (t={t}, x={x}, u={u}) = {R[t, x, u]} exceeds r_max={r_max}")
    if R_mu is not None and np.any(bound > r_max * (1 + 1e-12)):
        x, u = (int(i) for i in np.argwhere(bound > r_max)[0])
        raise ConfigError(f"reward at (x={x}, u={u}) can reach {bound[x, u]}, exceeding r_max={r_max}")

    base = base / base.sum(axis=-1, keepdims=True)
    if alt is not None:
        alt = alt / alt.sum(axis=-1, keepdims=True)

    def transition(t, mu):
        if alt is None or c_weight == 0.0:
            return base[t]
        lam = c_weight * float(mu[c_state])
        return base[t] + lam * (alt[t] - base[t])

    def reward(t, mu):
        if R_mu is None:
            return R[t]
        return R[t] + R_mu @ np.asarray(mu)

    game = GameSpec(
        n_states=X, n_actions=U, horizon=horizon,
        transition_fn=transition, reward_fn=reward, r_max=r_max,
        metadata={"surrogate_dynamics": False, "source": "config",
                  "mu_independent_transitions": alt is None or c_weight == 0.0},
    )
    try:
        initials = InitialSet(np.asarray(spec["initials"], dtype=float),
                              np.asarray(spec["weights"], dtype=float))
    except ValueError as err:
        raise ConfigError(f"invalid initial set: {err}") from err
    try:
        return EnvPreset(
            name=str(spec.get("name", "config")),
            game=game,
            initials=initials,
            alpha=float(spec.get("alpha", 1.0)),
            tau=float(spec.get("tau", 1.0)),
            fpi_iterations=int(spec.get("iterations", 30)),
            fictitious_beta=float(spec.get("beta", DEFAULT_FP_BETA)),
            regularizer=spec.get("regularizer", "entropy"),
        )
    except ValueError as err:
        raise ConfigError(str(err)) from err


def _check_stochastic_table(P, name):
    if not np.all(np.isfinite(P)):
        raise ConfigError(f"{name} table has non-finite entries")
    neg = np.argwhere(P < 0)
    if neg.size:
        raise ConfigError(f"{name} has a negative entry at index {tuple(int(i) for i in neg[0])}")
    dev = np.abs(P.sum(axis=-1) - 1.0)
    bad = np.argwhere(dev > PROB_TOL)
    if bad.size:
        t, x, u = (int(i) for i in bad[0])
        raise ConfigError(
            f"{name} row (t={t}, x={x}, u={u}) sums to {P[t, x, u].sum():.6g}, not 1"
        )
