"""Risk-averse quantal response equilibria for finite mean-field games."""

__version__ = "0.1.0"

from .exceptions import (  # noqa: E402
    ConfigError,
    ContractViolation,
    ConvergenceError,
    DomainError,
    MFRQEError,
    ModelError,
    UsageError,
)
from .game import (  # noqa: E402
    FlowSet,
    GameSpec,
    InitialSet,
    MeanFieldFlow,
    Policy,
    flow_distance,
    policy_distance,
    propagate_flow,
    propagate_flow_set,
)
from .risk import (  # noqa: E402
    ENTROPY,
    LOG_BARRIER,
    RegularizerSpec,
    RiskParams,
    best_response_policy,
    best_response_row,
    combined_cost,
    cost_gradient,
    make_regularizer,
    risk_cost,
)
from .dp import QField, VField, averaged_q, backward_q  # noqa: E402
from .envs import (  # noqa: E402
    PRESET_NAMES,
    EnvPreset,
    make_congestion,
    make_from_config,
    make_preset,
    make_sis,
    make_surrogate,
)
from .solvers import (  # noqa: E402
    AveragedPolicy,
    RQFictitiousPlay,
    RQFixedPointIteration,
    SingleInitialMFE,
    SolveReport,
    exploitability,
    rq_fictitious_play,
    rq_fpi,
    solve_pi_avg,
    solve_single_mfe,
)
from .population import (  # noqa: E402
    PopulationTrajectory,
    empirical_distribution,
    evaluate_returns,
    mf_gap,
    simulate_population,
)
