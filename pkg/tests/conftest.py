import numpy as np
import pytest

from mfrqe import GameSpec, InitialSet, make_preset, rq_fpi
from mfrqe.envs import EnvPreset


def random_simplex(rng, n, floor=0.0):
    p = rng.dirichlet(np.ones(n))
    if floor:
        p = (p + floor) / (1 + n * floor)
    return p


def random_row_instance(rng, max_actions=3, max_k=4, q_scale=2.0):
    """Action-value slices, prior weights and risk parameters for one state."""
    n = int(rng.integers(2, max_actions + 1))
    K = int(rng.integers(1, max_k + 1))
    q = rng.uniform(-q_scale, q_scale, size=(K, n))
    w = random_simplex(rng, K)
    tau = float(rng.uniform(0.05, 5.0))
    alpha = float(rng.uniform(0.2, 3.0))
    return q, w, tau, alpha


def random_game(rng, n_states=3, n_actions=2, horizon=3, coupled=True):
    """Small game whose transitions and rewards depend affinely on mu."""
    base = rng.dirichlet(np.ones(n_states), size=(horizon, n_states, n_actions))
    alt = rng.dirichlet(np.ones(n_states), size=(horizon, n_states, n_actions))
    R = rng.uniform(-1, 1, size=(horizon, n_states, n_actions))
    C = rng.uniform(-0.5, 0.5, size=(n_states, n_actions, n_states))

    def transition(t, mu):
        lam = float(mu[0]) if coupled else 0.0
        return base[t] + lam * (alt[t] - base[t])

    def reward(t, mu):
        return R[t] + (C @ mu if coupled else 0.0)

    return GameSpec(n_states, n_actions, horizon, transition, reward, r_max=1.5)


def random_preset(rng, K=2, **kwargs):
    game = random_game(rng, **kwargs)
    initials = InitialSet(rng.dirichlet(np.ones(game.n_states), size=K), random_simplex(rng, K))
    return EnvPreset("random", game, initials, alpha=1.0, tau=1.0, fpi_iterations=50,
                     fictitious_beta=0.5, regularizer="entropy")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def congestion():
    return make_preset("congestion")


@pytest.fixture(scope="session")
def congestion_rqe(congestion):
    return rq_fpi(congestion)


ACCEPTANCE_LINES = []


def record_acceptance(number, title, ok, detail):
    """Print and keep one PASS/FAIL line per acceptance criterion."""
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number:>2}: {title} ({detail})"
    print(line)
    ACCEPTANCE_LINES.append((number, line))
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
