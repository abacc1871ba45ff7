"""Equilibrium solvers, baseline policies and the exploitability metric.

The functional entry points (:func:`rq_fpi`, :func:`rq_fictitious_play`,
:func:`solve_single_mfe`, :func:`solve_pi_avg`, :func:`exploitability`) are
wrapped by scikit-learn style estimators (:class:`RQFixedPointIteration`,
:class:`RQFictitiousPlay`, :class:`SingleInitialMFE`,
:class:`AveragedPolicy`) whose ``fit`` takes an :class:`~mfrqe.envs.EnvPreset`.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import time
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from . import __version__
from .envs import EnvPreset
from .exceptions import ContractViolation, ConvergenceError
from .game import FlowSet, Policy, policy_distance, propagate_flow_set, tv_distance
from .risk import best_response_policy
from .validation import check_positive, check_positive_int, check_unit_interval

EARLY_STOP = 1e-10
EXPLOITABILITY_NORMS = ("l1", "tv")


@dataclass
class SolveReport:
    """Trace and result of one solver run."""

    final_policy: Policy
    final_flows: FlowSet
    exploitability_trace: list
    policy_delta_trace: list
    iterations_run: int
    wall_time: float
    seed: int
    preset_fingerprint: str
    solver: str = ""
    params: dict = field(default_factory=dict)

    @property
    def final_exploitability(self):
        return self.exploitability_trace[-1] if self.exploitability_trace else float("nan")

    def to_dict(self, include_timing=True):
        out = {
            "format_version": 1,
            "kind": "solve_report",
            "artifact_version": __version__,
            "solver": self.solver,
            "params": self.params,
            "seed": self.seed,
            "preset_fingerprint": self.preset_fingerprint,
            "iterations_run": self.iterations_run,
            "exploitability_trace": list(map(float, self.exploitability_trace)),
            "policy_delta_trace": list(map(float, self.policy_delta_trace)),
            "final_policy": self.final_policy.to_dict(),
            "final_flows": self.final_flows.to_dict(),
        }
        if include_timing:
            out["wall_time"] = self.wall_time
        return out

    @classmethod
    def from_dict(cls, data):
        return cls(
            final_policy=Policy.from_dict(data["final_policy"]),
            final_flows=FlowSet.from_dict(data["final_flows"]),
            exploitability_trace=list(data["exploitability_trace"]),
            policy_delta_trace=list(data["policy_delta_trace"]),
            iterations_run=int(data["iterations_run"]),
            wall_time=float(data.get("wall_time", 0.0)),
            seed=int(data["seed"]),
            preset_fingerprint=data["preset_fingerprint"],
            solver=data.get("solver", ""),
            params=data.get("params", {}),
        )

    def trace_csv(self):
        """Exploitability trace as two-column CSV text (iteration, value)."""
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["iteration", "exploitability"])
        for j, value in enumerate(self.exploitability_trace, start=1):
            writer.writerow([j, repr(float(value))])
        return buf.getvalue()


def preset_fingerprint(preset: EnvPreset) -> str:
    """SHA-256 over the preset's parameters and its evaluated tables.

    Tables are probed at the uniform distribution and every initial
    distribution, so two presets with identical parameters but different
    dynamics get different fingerprints.
    """
    h = hashlib.sha256()
    h.update(json.dumps(preset.export(), sort_keys=True).encode())
    game = preset.game
    probes = [np.full(game.n_states, 1.0 / game.n_states)] + list(preset.initials.initials)
    for t in range(game.horizon):
        for mu in probes:
            h.update(np.ascontiguousarray(game.transitions(t, mu)).tobytes())
            h.update(np.ascontiguousarray(game.rewards(t, mu)).tobytes())
    return h.hexdigest()


def policy_hash(policy: Policy) -> str:
    return hashlib.sha256(np.ascontiguousarray(policy.probs).tobytes()).hexdigest()


def _check_preset_policy(preset, policy):
    game = preset.game
    if policy.shape != (game.horizon, game.n_states, game.n_actions):
        raise ContractViolation(f"policy shape {policy.shape} does not match preset {preset.name!r}")


def best_response(preset: EnvPreset, policy: Policy, objective="risk", initials=None,
                  tol=1e-8, max_iters=10_000):
    """Propagate ``policy`` from every initial distribution, then best-respond."""
    initials = preset.initials if initials is None else initials
    flows = propagate_flow_set(preset.game, policy, initials)
    br = best_response_policy(preset.game, flows, initials.weights, preset.risk_params,
                              preset.regularizer, tol=tol, max_iters=max_iters,
                              objective=objective)
    return br, flows


def policy_gap(a: Policy, b: Policy, norm="l1") -> float:
    """Largest per-time gap between two policies.

    ``norm="l1"`` sums ``|a_t(u|x) - b_t(u|x)|`` over states and actions;
    ``norm="tv"`` takes the largest per-state total-variation distance.
    """
    if a.shape != b.shape:
        raise ContractViolation(f"policy shape mismatch: {a.shape} vs {b.shape}")
    if norm == "l1":
        return float(np.abs(a.probs - b.probs).sum(axis=(1, 2)).max())
    if norm == "tv":
        return float(tv_distance(a.probs, b.probs).max())
    raise ContractViolation(f"unknown norm {norm!r}; expected one of {EXPLOITABILITY_NORMS}")


def exploitability(policy: Policy, preset: EnvPreset, norm="l1", tol=1e-8) -> float:
    """Distance between ``policy`` and the risk-averse best response to the
    flows it induces (zero exactly at an equilibrium)."""
    _check_preset_policy(preset, policy)
    try:
        br, _ = best_response(preset, policy, tol=tol)
    except ConvergenceError as err:
        raise ConvergenceError(f"exploitability of a policy on {preset.name!r}: {err}",
                               residual=err.residual, location=err.location) from err
    return policy_gap(policy, br, norm)


def _run_fpi(preset, iterations, init, objective, initials, solver_name, tol, norm,
             early_stop, seed):
    iterations = check_positive_int(iterations, "iterations")
    start = time.perf_counter()
    policy = Policy.uniform(preset.game) if init is None else init
    _check_preset_policy(preset, policy)
    br, _ = best_response(preset, policy, objective, initials, tol)
    expl_trace, delta_trace = [], []
    for _ in range(iterations):
        new = br
        delta = policy_distance(policy, new)
        policy = new
        # the next iterate doubles as the best response that certifies this one
        br, flows = best_response(preset, policy, objective, initials, tol)
        delta_trace.append(delta)
        expl_trace.append(policy_gap(policy, br, norm))
        if delta < early_stop:
            break
    flows = propagate_flow_set(preset.game, policy, initials)
    return SolveReport(
        final_policy=policy,
        final_flows=flows,
        exploitability_trace=expl_trace,
        policy_delta_trace=delta_trace,
        iterations_run=len(delta_trace),
        wall_time=time.perf_counter() - start,
        seed=seed,
        preset_fingerprint=preset_fingerprint(preset),
        solver=solver_name,
        params=_params(preset, iterations=iterations, objective=objective, norm=norm),
    )


def _params(preset, **extra):
    out = {
        "env": preset.name,
        "alpha": preset.alpha,
        "tau": preset.tau,
        "regularizer": preset.regularizer.kind,
        "weights": preset.initials.weights.tolist(),
    }
    out.update(extra)
    return out


def rq_fpi(preset: EnvPreset, iterations=None, init=None, tol=1e-8, norm="l1",
           early_stop=EARLY_STOP, seed=0) -> SolveReport:
    """Risk-averse quantal fixed-point iteration.

    Repeats ``policy <- best_response(flows(policy))`` from the uniform
    policy, recording each iterate's exploitability and the distance moved.
    Stops early once an update moves the policy by less than ``early_stop``.

    For a non-risk objective the recorded exploitability is measured against
    that objective's own best response; use :func:`exploitability` for the
    risk-averse metric.
    """
    iterations = preset.fpi_iterations if iterations is None else iterations
    return _run_fpi(preset, iterations, init, "risk", preset.initials, "fpi", tol, norm,
                    early_stop, seed)


def rq_fictitious_play(preset: EnvPreset, iterations=200, beta=None, tol=1e-8, norm="l1",
                       early_stop=EARLY_STOP, seed=0) -> SolveReport:
    """Risk-averse quantal fictitious play.

    Keeps a running average ``avg <- beta * avg + (1 - beta) * policy``
    (rows renormalized) and best-responds to the flows of the average. The
    average starts at zero and the policy at uniform, so the first average
    equals the uniform policy. Returns the averaged policy.
    """
    beta = preset.fictitious_beta if beta is None else check_unit_interval(beta, "beta")
    iterations = check_positive_int(iterations, "iterations")
    start = time.perf_counter()
    game = preset.game
    policy = Policy.uniform(game).probs
    avg = np.zeros_like(policy)
    prev = None
    expl_trace, delta_trace = [], []
    for _ in range(iterations):
        avg = beta * avg + (1.0 - beta) * policy
        avg = avg / avg.sum(axis=-1, keepdims=True)
        avg_policy = Policy(avg)
        br, _ = best_response(preset, avg_policy, tol=tol)
        delta = policy_distance(prev, avg_policy) if prev is not None else \
            policy_distance(Policy.uniform(game), avg_policy)
        delta_trace.append(delta)
        expl_trace.append(policy_gap(avg_policy, br, norm))
        policy = br.probs
        if prev is not None and delta < early_stop:
            break
        prev = avg_policy
    flows = propagate_flow_set(game, avg_policy, preset.initials)
    return SolveReport(
        final_policy=avg_policy,
        final_flows=flows,
        exploitability_trace=expl_trace,
        policy_delta_trace=delta_trace,
        iterations_run=len(delta_trace),
        wall_time=time.perf_counter() - start,
        seed=seed,
        preset_fingerprint=preset_fingerprint(preset),
        solver="fictitious_play",
        params=_params(preset, iterations=iterations, beta=beta, norm=norm),
    )


def solve_single_mfe(preset: EnvPreset, which_mu0, iterations=None, tol=1e-8) -> Policy:
    """Entropy-regularized equilibrium for one initial distribution only."""
    single = preset.with_params(initials=preset.initials.singleton(which_mu0))
    return rq_fpi(single, iterations=iterations, tol=tol).final_policy


def solve_pi_avg(preset: EnvPreset, iterations=None, tol=1e-8) -> Policy:
    """Risk-neutral baseline: best response to the prior-averaged Q values,
    iterated with freshly propagated flows until self-consistent."""
    iterations = preset.fpi_iterations if iterations is None else iterations
    report = _run_fpi(preset, iterations, None, "average", preset.initials, "pi_avg", tol,
                      "l1", EARLY_STOP, 0)
    return report.final_policy


# scikit-learn style wrappers ---------------------------------------------


class _PresetSolver(BaseEstimator):
    """Shared plumbing: parameter overrides, fitted-state checks, prediction."""

    def _resolve(self, preset):
        if not isinstance(preset, EnvPreset):
            raise ContractViolation(f"fit expects an EnvPreset, got {type(preset).__name__}")
        changes = {}
        if self.alpha is not None:
            changes["alpha"] = check_positive(self.alpha, "alpha")
        if self.tau is not None:
            changes["tau"] = check_positive(self.tau, "tau")
        if self.regularizer is not None:
            changes["regularizer"] = self.regularizer
        return preset.with_params(**changes) if changes else preset

    def _check_fitted(self):
        if not hasattr(self, "policy_"):
            raise NotFittedError(f"{type(self).__name__} is not fitted yet; call fit(preset)")

    def predict_proba(self, X):
        """Action probabilities for an ``(n, 2)`` array of ``(t, state)`` pairs."""
        self._check_fitted()
        X = np.asarray(X, dtype=int)
        if X.ndim != 2 or X.shape[1] != 2:
            raise ContractViolation(f"expected (n, 2) array of (t, state) pairs, got {X.shape}")
        T, S, _ = self.policy_.shape
        if np.any(X[:, 0] < 0) or np.any(X[:, 0] >= T) or np.any(X[:, 1] < 0) or np.any(X[:, 1] >= S):
            raise ContractViolation("(t, state) pair out of range")
        return self.policy_.probs[X[:, 0], X[:, 1]]

    def predict(self, X):
        """Most likely action for each ``(t, state)`` pair."""
        return self.predict_proba(X).argmax(axis=1)

    def transform(self, preset):
        """Mean-field flows induced by the fitted policy on ``preset``."""
        self._check_fitted()
        return propagate_flow_set(preset.game, self.policy_, preset.initials)

    def score(self, preset):
        """Negative exploitability under ``preset`` (higher is better)."""
        self._check_fitted()
        return -exploitability(self.policy_, self._resolve(preset), norm=self.norm)

    def _store(self, report, preset):
        self.report_ = report
        self.policy_ = report.final_policy
        self.flows_ = report.final_flows
        self.n_iter_ = report.iterations_run
        self.exploitability_ = report.final_exploitability
        self.preset_ = preset
        return self


class RQFixedPointIteration(_PresetSolver):
    """Fixed-point iteration for the risk-averse quantal equilibrium.

    ``None`` parameters fall back to the preset's default values.
    """

    def __init__(self, alpha=None, tau=None, regularizer=None, n_iter=None, tol=1e-8,
                 norm="l1", early_stop=EARLY_STOP, seed=0):
        self.alpha = alpha
        self.tau = tau
        self.regularizer = regularizer
        self.n_iter = n_iter
        self.tol = tol
        self.norm = norm
        self.early_stop = early_stop
        self.seed = seed

    def fit(self, preset, y=None):
        preset = self._resolve(preset)
        report = rq_fpi(preset, iterations=self.n_iter, tol=self.tol, norm=self.norm,
                        early_stop=self.early_stop, seed=self.seed)
        return self._store(report, preset)


class RQFictitiousPlay(_PresetSolver):
    """Fictitious play on the running policy average."""

    def __init__(self, alpha=None, tau=None, regularizer=None, beta=None, n_iter=200,
                 tol=1e-8, norm="l1", early_stop=EARLY_STOP, seed=0):
        self.alpha = alpha
        self.tau = tau
        self.regularizer = regularizer
        self.beta = beta
        self.n_iter = n_iter
        self.tol = tol
        self.norm = norm
        self.early_stop = early_stop
        self.seed = seed

    def fit(self, preset, y=None):
        preset = self._resolve(preset)
        report = rq_fictitious_play(preset, iterations=self.n_iter, beta=self.beta,
                                    tol=self.tol, norm=self.norm,
                                    early_stop=self.early_stop, seed=self.seed)
        return self._store(report, preset)


class SingleInitialMFE(_PresetSolver):
    """Baseline equilibrium computed for a single initial distribution."""

    def __init__(self, which_mu0=0, alpha=None, tau=None, regularizer=None, n_iter=None,
                 tol=1e-8, norm="l1", seed=0):
        self.which_mu0 = which_mu0
        self.alpha = alpha
        self.tau = tau
        self.regularizer = regularizer
        self.n_iter = n_iter
        self.tol = tol
        self.norm = norm
        self.seed = seed

    def fit(self, preset, y=None):
        preset = self._resolve(preset)
        single = preset.with_params(initials=preset.initials.singleton(self.which_mu0))
        report = rq_fpi(single, iterations=self.n_iter, tol=self.tol, norm=self.norm,
                        seed=self.seed)
        self._store(report, preset)
        self.flows_ = propagate_flow_set(preset.game, self.policy_, preset.initials)
        self.exploitability_ = exploitability(self.policy_, preset, norm=self.norm)
        return self


class AveragedPolicy(_PresetSolver):
    """Risk-neutral baseline maximizing the prior-averaged regularized return."""

    def __init__(self, alpha=None, tau=None, regularizer=None, n_iter=None, tol=1e-8,
                 norm="l1", seed=0):
        self.alpha = alpha
        self.tau = tau
        self.regularizer = regularizer
        self.n_iter = n_iter
        self.tol = tol
        self.norm = norm
        self.seed = seed

    def fit(self, preset, y=None):
        preset = self._resolve(preset)
        iterations = preset.fpi_iterations if self.n_iter is None else self.n_iter
        report = _run_fpi(preset, iterations, None, "average", preset.initials, "pi_avg",
                          self.tol, self.norm, EARLY_STOP, self.seed)
        self._store(report, preset)
        self.exploitability_ = exploitability(self.policy_, preset, norm=self.norm)
        return self


SOLVERS = {
    "fpi": RQFixedPointIteration,
    "fictitious_play": RQFictitiousPlay,
    "pi_avg": AveragedPolicy,
    "single_mfe": SingleInitialMFE,
}
