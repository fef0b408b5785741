"""Stationary equilibria of large anonymous dynamic games.

Typical use::

    from anongames import quality_ladder, solve_se
    report = solve_se(quality_ladder(theta1=0.5, x_max=100))
"""

from .core import (
    ConfigError,
    ContinuousBox,
    FinitePure,
    ModelContractError,
    ModelSpec,
    NonConvergenceError,
    ObliviousStrategy,
    PopulationState,
    TruncatedStateSpace,
    apply_truncated_kernel,
    one_p_distance,
    one_p_norm,
    weighted_sup_distance,
)
from .dp import DpSolveOptions, bellman_apply, bellman_residual, policy_value, solve_value
from .equilibrium import (
    ConditionReport,
    SeSolveOptions,
    SolveReport,
    best_response,
    phi_step,
    se_residual,
    solve_se,
    verify_conditions,
)
from .invariant import (
    InducedChain,
    InvariantOptions,
    MultipleRecurrentClassesWarning,
    drift,
    foster_lyapunov_check,
    induced_chain,
    invariant_distribution,
    invariant_state_action,
)
from .models import (
    ConsumerLearningParams,
    LearningByDoingParams,
    QualityLadderParams,
    SpilloverParams,
    SupplyChainParams,
    build_model,
    consumer_learning,
    learning_by_doing,
    quality_ladder,
    spillover_oligopoly,
    supply_chain,
)
from .simulate import (
    GapStats,
    SimConfig,
    SimTrace,
    concentration_metrics,
    conditional_value,
    deviation_gap,
    perturbed_population,
    simulate_population,
)

__version__ = "0.1.0"

__all__ = [
    "ConditionReport",
    "ConfigError",
    "ConsumerLearningParams",
    "ContinuousBox",
    "DpSolveOptions",
    "FinitePure",
    "GapStats",
    "InducedChain",
    "InvariantOptions",
    "LearningByDoingParams",
    "ModelContractError",
    "ModelSpec",
    "MultipleRecurrentClassesWarning",
    "NonConvergenceError",
    "ObliviousStrategy",
    "PopulationState",
    "QualityLadderParams",
    "SeSolveOptions",
    "SimConfig",
    "SimTrace",
    "SolveReport",
    "SpilloverParams",
    "SupplyChainParams",
    "TruncatedStateSpace",
    "apply_truncated_kernel",
    "bellman_apply",
    "bellman_residual",
    "best_response",
    "build_model",
    "concentration_metrics",
    "conditional_value",
    "consumer_learning",
    "deviation_gap",
    "drift",
    "foster_lyapunov_check",
    "induced_chain",
    "invariant_distribution",
    "invariant_state_action",
    "learning_by_doing",
    "one_p_distance",
    "one_p_norm",
    "perturbed_population",
    "phi_step",
    "policy_value",
    "quality_ladder",
    "se_residual",
    "simulate_population",
    "solve_se",
    "solve_value",
    "spillover_oligopoly",
    "supply_chain",
    "verify_conditions",
    "weighted_sup_distance",
]
