"""Command-line front end.

Subcommands::

    mfrqe solve          --env congestion --solver fpi --out results/
    mfrqe compare        --env sis --episodes 10000 --seeds 5
    mfrqe simulate       --env congestion --population 16 64 256 1024
    mfrqe export-preset  --env rps --seed 3

Settings come from an optional TOML file (``--config``) and are then
overridden by flags. A config file looks like::

    seed = 0
    solver = "fpi"            # fpi | fictitious_play | pi_avg | single_mfe
    single_mfe_index = 1      # required for single_mfe
    output_dir = "results"

    [environment]
    preset = "congestion"     # or an [environment.tables] section
    regularizer = "entropy"

    [overrides]
    alpha = 15.0
    tau = 0.0667
    iterations = 30
    beta = 0.5
    tolerance = 1e-8

    [evaluation]
    episodes = 10000
    seeds = 5
    population = [16, 64, 256, 1024]

``[environment.tables]`` takes the keys accepted by
:func:`mfrqe.envs.make_from_config`.

Exit codes: 0 success, 2 configuration error, 3 solver failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import tomli
from threadpoolctl import threadpool_limits

from . import __version__
from .envs import PRESET_NAMES, make_from_config, make_preset
from .exceptions import ConfigError, ContractViolation, ConvergenceError, DomainError, ModelError
from .population import evaluate_returns, mf_gap
from .risk import REGULARIZERS
from .solvers import (
    SOLVERS,
    exploitability,
    preset_fingerprint,
    rq_fictitious_play,
    rq_fpi,
    solve_pi_avg,
    solve_single_mfe,
)

log = logging.getLogger("mfrqe")

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER = 0, 2, 3

_TOP_KEYS = {"seed", "solver", "single_mfe_index", "output_dir", "environment", "overrides",
             "evaluation"}
_OVERRIDE_KEYS = {"alpha", "tau", "iterations", "beta", "regularizer", "tolerance"}
_EVAL_KEYS = {"episodes", "seeds", "population"}


@dataclass
class RunConfig:
    """Fully resolved settings for one command."""

    env: str | None = "congestion"
    tables: dict | None = None
    regularizer: str | None = None
    alpha: float | None = None
    tau: float | None = None
    iterations: int | None = None
    beta: float | None = None
    tolerance: float = 1e-8
    solver: str = "fpi"
    single_mfe_index: int | None = None
    episodes: int = 10_000
    seeds: int = 5
    population: list = field(default_factory=lambda: [16, 64, 256, 1024])
    output_dir: str = "out"
    seed: int = 0

    def fingerprint(self):
        """SHA-256 of every setting that can influence results."""
        payload = asdict(self)
        payload.pop("output_dir")
        return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()


# validation ---------------------------------------------------------------


def _positive(value, name, integer=False, allow_zero=False):
    if value is None:
        return None
    if isinstance(value, bool):
        raise ConfigError(f"{name}: expected a number, got {value!r}")
    if integer:
        if isinstance(value, float) and value.is_integer():
            value = int(value)
        if not isinstance(value, int):
            raise ConfigError(f"{name}: expected an integer, got {value!r}")
    elif not isinstance(value, (int, float)):
        raise ConfigError(f"{name}: expected a number, got {value!r}")
    ok = value >= 0 if allow_zero else value > 0
    if not ok or not np.isfinite(value):
        bound = ">= 0" if allow_zero else "> 0"
        raise ConfigError(f"{name}: must be {bound}, got {value!r}")
    return value


def _validate(cfg: RunConfig) -> RunConfig:
    if cfg.tables is None:
        if cfg.env not in PRESET_NAMES:
            raise ConfigError(f"environment: unknown name {cfg.env!r}; valid names: "
                              f"{', '.join(PRESET_NAMES)}")
    if cfg.regularizer is not None and cfg.regularizer not in REGULARIZERS:
        raise ConfigError(f"regularizer: unknown kind {cfg.regularizer!r}; valid kinds: "
                          f"{', '.join(REGULARIZERS)}")
    if cfg.solver not in SOLVERS:
        raise ConfigError(f"solver: unknown {cfg.solver!r}; valid solvers: {', '.join(SOLVERS)}")
    _positive(cfg.alpha, "alpha")
    _positive(cfg.tau, "tau")
    _positive(cfg.iterations, "iterations", integer=True)
    _positive(cfg.tolerance, "tolerance")
    if cfg.beta is not None:
        _positive(cfg.beta, "beta")
        if cfg.beta >= 1:
            raise ConfigError(f"beta: must lie in (0, 1), got {cfg.beta!r}")
    _positive(cfg.episodes, "episodes", integer=True, allow_zero=True)
    _positive(cfg.seeds, "seeds", integer=True)
    if isinstance(cfg.seed, bool) or not isinstance(cfg.seed, int) or cfg.seed < 0:
        raise ConfigError(f"seed: expected a non-negative integer, got {cfg.seed!r}")
    if not isinstance(cfg.population, (list, tuple)) or not cfg.population:
        raise ConfigError("population: expected a non-empty list of agent counts")
    for n in cfg.population:
        _positive(n, "population", integer=True)
    if cfg.solver == "single_mfe":
        if cfg.single_mfe_index is None:
            raise ConfigError("single_mfe_index: required when solver is single_mfe")
        _positive(cfg.single_mfe_index, "single_mfe_index", integer=True, allow_zero=True)
    return cfg


def _load_toml(path):
    try:
        with open(path, "rb") as fh:
            return tomli.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config: file not found: {path}") from None
    except tomli.TOMLDecodeError as err:
        raise ConfigError(f"config: {path}: {err}") from None


def _check_keys(section, allowed, where):
    unknown = sorted(set(section) - allowed)
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {', '.join(unknown)}")


def config_from_file(data) -> dict:
    """Flatten a parsed TOML document into :class:`RunConfig` keyword arguments."""
    _check_keys(data, _TOP_KEYS, "config")
    out = {k: data[k] for k in ("seed", "solver", "single_mfe_index", "output_dir") if k in data}
    env = data.get("environment", {})
    if not isinstance(env, dict):
        raise ConfigError("environment: expected a section")
    _check_keys(env, {"preset", "regularizer", "tables"}, "environment")
    if "preset" in env and "tables" in env:
        raise ConfigError("environment: give either 'preset' or 'tables', not both")
    if "tables" in env:
        out["tables"] = env["tables"]
        out["env"] = None
    elif "preset" in env:
        out["env"] = env["preset"]
    if "regularizer" in env:
        out["regularizer"] = env["regularizer"]
    overrides = data.get("overrides", {})
    _check_keys(overrides, _OVERRIDE_KEYS, "overrides")
    out.update(overrides)
    evaluation = data.get("evaluation", {})
    _check_keys(evaluation, _EVAL_KEYS, "evaluation")
    out.update(evaluation)
    return out


def resolve_config(args) -> RunConfig:
    """Config file first, then command-line flags on top."""
    values = config_from_file(_load_toml(args.config)) if args.config else {}
    flag_map = {
        "env": args.env, "solver": getattr(args, "solver", None), "alpha": args.alpha,
        "tau": args.tau, "iterations": args.iterations, "beta": args.beta,
        "regularizer": args.regularizer, "episodes": getattr(args, "episodes", None),
        "seeds": getattr(args, "seeds", None), "population": getattr(args, "population", None),
        "seed": args.seed, "output_dir": args.out,
        "single_mfe_index": getattr(args, "mu0_index", None),
    }
    for key, value in flag_map.items():
        if value is not None:
            values[key] = value
    if args.env is not None:
        values["tables"] = None
    return _validate(RunConfig(**values))


def build_preset(cfg: RunConfig):
    if cfg.tables is not None:
        tables = dict(cfg.tables)
        if cfg.regularizer is not None:
            tables["regularizer"] = cfg.regularizer
        preset = make_from_config(tables)
    else:
        # a regularizer choice also selects that regularizer's default profile
        preset = make_preset(cfg.env, seed=cfg.seed, regularizer=cfg.regularizer or "entropy")
    changes = {}
    if cfg.alpha is not None:
        changes["alpha"] = float(cfg.alpha)
    if cfg.tau is not None:
        changes["tau"] = float(cfg.tau)
    if cfg.iterations is not None:
        changes["fpi_iterations"] = int(cfg.iterations)
    if cfg.beta is not None:
        changes["fictitious_beta"] = float(cfg.beta)
    if cfg.single_mfe_index is not None and cfg.single_mfe_index >= preset.initials.K:
        raise ConfigError(f"single_mfe_index: {cfg.single_mfe_index} outside "
                          f"[0, {preset.initials.K})")
    return preset.with_params(**changes) if changes else preset


# output -------------------------------------------------------------------


class _Outputs:
    """Writes files that all carry the same provenance block."""

    def __init__(self, cfg: RunConfig, preset):
        self.dir = Path(cfg.output_dir)
        self.meta = {
            "config_fingerprint": cfg.fingerprint(),
            "preset_fingerprint": preset_fingerprint(preset),
            "seed": cfg.seed,
            "artifact_version": __version__,
        }

    def _path(self, name):
        self.dir.mkdir(parents=True, exist_ok=True)
        return self.dir / name

    def json(self, name, payload):
        path = self._path(name)
        body = {"meta": self.meta, **payload}
        path.write_text(json.dumps(body, indent=2, sort_keys=True) + "\n", newline="\n")
        return path

    def csv(self, name, header, rows):
        """CSV with a ``#`` provenance preamble followed by the header row."""
        path = self._path(name)
        with open(path, "w", newline="") as fh:
            for key, value in self.meta.items():
                fh.write(f"# {key}={value}\n")
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(header)
            writer.writerows(rows)
        return path


def _fmt(value):
    return "" if value is None else repr(float(value))


# commands -----------------------------------------------------------------


def _solve(cfg: RunConfig, preset):
    tol = cfg.tolerance
    if cfg.solver == "fpi":
        return rq_fpi(preset, tol=tol, seed=cfg.seed)
    if cfg.solver == "fictitious_play":
        iterations = cfg.iterations if cfg.iterations is not None else 200
        return rq_fictitious_play(preset, iterations=iterations, tol=tol, seed=cfg.seed)
    est_cls = SOLVERS[cfg.solver]
    kwargs = {"tol": tol, "seed": cfg.seed}
    if cfg.solver == "single_mfe":
        kwargs["which_mu0"] = cfg.single_mfe_index
    est = est_cls(**kwargs).fit(preset)
    report = est.report_
    report.solver = cfg.solver
    return report


def cmd_solve(cfg: RunConfig):
    preset = build_preset(cfg)
    report = _solve(cfg, preset)
    final = exploitability(report.final_policy, preset, tol=cfg.tolerance)
    out = _Outputs(cfg, preset)
    payload = report.to_dict()
    payload["exploitability"] = final
    out.json("report.json", payload)
    out.json("policy.json", {"policy": report.final_policy.to_dict()})
    out.json("flows.json", {"flows": report.final_flows.to_dict()})
    out.csv("exploitability_trace.csv", ["iteration", "exploitability"],
            [[j, _fmt(v)] for j, v in enumerate(report.exploitability_trace, start=1)])
    print(f"env={preset.name} solver={cfg.solver} iterations={report.iterations_run} "
          f"exploitability={final:.6g}")
    print(f"wrote {out.dir}/report.json, policy.json, flows.json, exploitability_trace.csv")
    return EXIT_OK


def cmd_compare(cfg: RunConfig):
    preset = build_preset(cfg)
    tol = cfg.tolerance
    policies = [(f"single_mu0_{k + 1}", solve_single_mfe(preset, k, tol=tol))
                for k in range(preset.initials.K)]
    policies.append(("avg", solve_pi_avg(preset, tol=tol)))
    policies.append(("rqe", rq_fpi(preset, tol=tol, seed=cfg.seed).final_policy))
    rows = []
    for name, policy in policies:
        expl = exploitability(policy, preset, tol=tol)
        if cfg.episodes > 0:
            est = evaluate_returns(preset, policy, cfg.episodes, cfg.seeds, seed=cfg.seed)
            mean, stderr = est.mean, est.stderr
        else:
            mean = stderr = None
        rows.append([name, _fmt(expl), _fmt(mean), _fmt(stderr)])
        shown = "" if mean is None else f"  return={mean:.3f} ± {stderr:.3f}"
        print(f"{name:>14}  exploitability={expl:.4f}{shown}")
    path = _Outputs(cfg, preset).csv("compare.csv",
                                     ["policy", "exploitability", "mean_return", "stderr"], rows)
    print(f"wrote {path}")
    return EXIT_OK


def cmd_simulate(cfg: RunConfig):
    preset = build_preset(cfg)
    sizes = []
    for n in cfg.population:
        if n in sizes:
            warnings.warn(f"population size {n} listed more than once; using it once",
                          stacklevel=2)
            continue
        sizes.append(int(n))
    episodes = cfg.episodes if cfg.episodes > 0 else 2000
    policy = _solve(cfg, preset).final_policy
    rows, means = [], []
    for n in sizes:
        gap = mf_gap(preset, policy, n, episodes, seed=cfg.seed)
        rows.append([n, _fmt(gap.mean_gap), _fmt(gap.max_gap)])
        means.append(gap.mean_gap)
        print(f"N={n:>6}  mean_gap={gap.mean_gap:.5f}  max_gap={gap.max_gap:.5f}")
    slope = None
    if len(sizes) >= 2 and all(m > 0 for m in means):
        slope = float(np.polyfit(np.log(sizes), np.log(means), 1)[0])
        print(f"log-log slope={slope:.4f}")
    out = _Outputs(cfg, preset)
    out.csv("population_scaling.csv", ["N", "mean_gap", "max_gap"], rows)
    out.json("population_scaling.json", {"population": sizes, "episodes": episodes,
                                         "mean_gap": means, "slope": slope})
    print(f"wrote {out.dir}/population_scaling.csv, population_scaling.json")
    return EXIT_OK


def cmd_export_preset(cfg: RunConfig):
    preset = build_preset(cfg)
    if cfg.output_dir is None:
        print(preset.export_json())
    else:
        path = _Outputs(cfg, preset).json("preset.json", {"preset": preset.export()})
        print(f"wrote {path}")
    return EXIT_OK


COMMANDS = {
    "solve": cmd_solve,
    "compare": cmd_compare,
    "simulate": cmd_simulate,
    "export-preset": cmd_export_preset,
}


# argument parsing ---------------------------------------------------------


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--env", help=f"preset name ({', '.join(PRESET_NAMES)})")
    common.add_argument("--config", help="TOML config file")
    common.add_argument("--alpha", type=float)
    common.add_argument("--tau", type=float)
    common.add_argument("--iterations", type=int)
    common.add_argument("--beta", type=float, help="fictitious-play averaging weight")
    common.add_argument("--regularizer", choices=sorted(REGULARIZERS))
    common.add_argument("--threads", type=int, default=None,
                        help="cap on worker threads (default: available parallelism)")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    solver = argparse.ArgumentParser(add_help=False)
    solver.add_argument("--solver", choices=sorted(SOLVERS))
    solver.add_argument("--mu0-index", dest="mu0_index", type=int,
                        help="initial distribution index for single_mfe")

    evaluation = argparse.ArgumentParser(add_help=False)
    evaluation.add_argument("--episodes", type=int)
    evaluation.add_argument("--seeds", type=int)
    evaluation.add_argument("--population", type=int, nargs="+")

    parser = argparse.ArgumentParser(
        prog="mfrqe",
        description="Risk-averse quantal response equilibria for finite mean-field games.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("solve", parents=[common, solver], help="solve one preset")
    sub.add_parser("compare", parents=[common, evaluation],
                   help="exploitability and returns of the baselines and the equilibrium")
    sub.add_parser("simulate", parents=[common, solver, evaluation],
                   help="finite-population mean-field gap across population sizes")
    sub.add_parser("export-preset", parents=[common], help="dump a preset's parameters")
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.threads is not None and args.threads < 1:
            raise ConfigError(f"threads: must be >= 1, got {args.threads}")
        if args.command == "export-preset" and args.out is None:
            args.out = "-"
        cfg = resolve_config(args)
        if cfg.output_dir == "-":
            cfg.output_dir = None
        threads = args.threads or os.cpu_count() or 1
        with threadpool_limits(limits=threads):
            return COMMANDS[args.command](cfg)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except (ConvergenceError, ModelError, DomainError, ContractViolation) as err:
        print(f"solver failure ({args.command}): {err}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
