import json

import numpy as np
import pytest

from mfrqe import (
    PRESET_NAMES,
    ConfigError,
    Policy,
    UsageError,
    make_from_config,
    make_preset,
    make_sis,
    propagate_flow_set,
)
from mfrqe.envs import HYPERPARAMS


@pytest.mark.parametrize("name", PRESET_NAMES)
@pytest.mark.parametrize("regularizer", ["entropy", "log_barrier"])
def test_presets_are_well_formed(name, regularizer):
    preset = make_preset(name, regularizer=regularizer)
    T, alpha, tau, iters = HYPERPARAMS[regularizer][name]
    assert (preset.game.horizon, preset.alpha, preset.tau, preset.fpi_iterations) == \
        (T, alpha, tau, iters)
    assert preset.regularizer.kind == regularizer
    np.testing.assert_allclose(preset.initials.initials.sum(axis=1), 1.0)
    # every table evaluates cleanly along the uniform policy's flows
    flows = propagate_flow_set(preset.game, Policy.uniform(preset.game), preset.initials)
    for k in range(flows.K):
        for t in range(preset.game.horizon):
            preset.game.transitions(t, flows[k].states[t])
            preset.game.rewards(t, flows[k].states[t])


def test_surrogate_flags():
    assert not make_preset("congestion").is_surrogate
    for name in PRESET_NAMES[1:]:
        assert make_preset(name).is_surrogate


def test_congestion_dynamics():
    game = make_preset("congestion").game
    P = game.transitions(0, np.full(4, 0.25))
    assert P[0, 0, 0] == 1.0   # LEFT at the left edge stays put
    assert P[3, 1, 3] == 1.0   # RIGHT at the right edge stays put
    assert P[1, 1, 2] == 1.0
    assert P[2, 2, 2] == 1.0
    R = game.rewards(0, np.array([0.5, 0.5, 0.0, 0.0]))
    assert R[0, 2] == pytest.approx(-1.0)
    assert R[0, 0] == pytest.approx(-1.1)
    assert R[3, 2] == 0.0


def test_sis_dynamics():
    game = make_sis().game
    mu = np.array([0.6, 0.4])
    P = game.transitions(0, mu)
    np.testing.assert_allclose(P[0, 0], [1 - 0.32, 0.32])
    np.testing.assert_allclose(P[0, 1], [1.0, 0.0])
    np.testing.assert_allclose(P[1, 0], [0.3, 0.7])
    R = game.rewards(0, mu)
    np.testing.assert_allclose(R, [[0.0, -0.5], [-1.0, -1.5]])


def test_random_linear_is_seeded():
    a = make_preset("random_linear", seed=3).game
    b = make_preset("random_linear", seed=3).game
    c = make_preset("random_linear", seed=4).game
    mu = np.full(5, 0.2)
    np.testing.assert_array_equal(a.transitions(1, mu), b.transitions(1, mu))
    assert not np.array_equal(a.transitions(1, mu), c.transitions(1, mu))


def test_unknown_name_lists_valid_names():
    with pytest.raises(UsageError, match="congestion"):
        make_preset("nope")


def test_with_params_and_export(congestion):
    changed = congestion.with_params(alpha=150.0)
    assert changed.alpha == 150.0 and congestion.alpha == 15.0
    data = json.loads(congestion.export_json())
    assert data["kind"] == "env_preset"
    assert data["alpha"] == 15.0 and data["horizon"] == 5
    assert data["surrogate_dynamics"] is False
    assert len(data["initials"]) == 4


def _tables():
    return {
        "horizon": 2,
        "transition": [[[1.0, 0.0], [0.0, 1.0]], [[0.5, 0.5], [0.2, 0.8]]],
        "transition_shape": [2, 2, 2],
        "reward": [[0.0, -0.1], [-1.0, -1.1]],
        "initials": [[1.0, 0.0], [0.5, 0.5]],
        "weights": [0.5, 0.5],
        "alpha": 2.0,
        "tau": 0.5,
    }


def test_make_from_config_round_trip():
    preset = make_from_config(_tables())
    assert preset.game.n_states == 2 and preset.game.n_actions == 2
    assert preset.alpha == 2.0 and preset.tau == 0.5
    np.testing.assert_array_equal(preset.game.transitions(1, np.array([0.5, 0.5]))[1, 1],
                                  [0.2, 0.8])


def test_make_from_config_coupling():
    tables = _tables()
    tables["transition_alt"] = [[[0.0, 1.0], [1.0, 0.0]], [[0.5, 0.5], [0.2, 0.8]]]
    tables["coupling_state"] = 1
    tables["coupling_weight"] = 1.0
    tables["reward_mu"] = np.zeros((2, 2, 2)).tolist()
    preset = make_from_config(tables)
    P = preset.game.transitions(0, np.array([0.75, 0.25]))
    np.testing.assert_allclose(P[0, 0], [0.75, 0.25])


@pytest.mark.parametrize("mutate, message", [
    (lambda t: t.pop("reward"), "missing 'reward'"),
    (lambda t: t.__setitem__("horizon", 0), "horizon"),
    (lambda t: t.__setitem__("transition_shape", [2, 2, 3]), "declared shape"),
    (lambda t: t["transition"][1].__setitem__(0, [0.5, 0.6]), r"row \(t=0, x=1, u=0\)"),
    (lambda t: t["transition"][0].__setitem__(1, [1.5, -0.5]), "negative entry"),
    (lambda t: t.__setitem__("reward", [[0.0, 1.0]]), "reward shape"),
    (lambda t: t.__setitem__("r_max", 0.5), r"reward at \(t=0, x=1, u=0\)"),
    (lambda t: t.__setitem__("weights", [0.5, 0.6]), "initial"),
    (lambda t: t.__setitem__("alpha", -1.0), "alpha"),
])
def test_make_from_config_errors_name_the_field(mutate, message):
    tables = _tables()
    mutate(tables)
    with pytest.raises(ConfigError, match=message):
        make_from_config(tables)
