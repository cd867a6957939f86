"""Solver suite for viscous Hamilton-Jacobi-Isaacs equations.

Mesh-free policy iteration with physics-informed networks, a built-in
derivative engine for sine MLPs, an explicit finite-difference reference
solver, two benchmark differential games, and an analysis harness.
"""

from .problems import (
    Box,
    ControlSet,
    DiffusionSpec,
    TerminalCost,
    QuadraticCost,
    ProblemDefinition,
    PathPlanningProblem,
    PubSubProblem,
    build_anisotropic_sigma,
    lagrangian,
)
from .nets import (
    NetworkArch,
    NetworkState,
    ValueJet,
    BatchJet,
    JetContext,
    xavier_init,
    forward,
    forward_batch,
    ansatz_value,
    ansatz_value_batch,
    value_jet,
    value_jet_batch,
    loss_param_gradient,
    save_network,
    load_network,
    network_to_text,
    network_from_text,
)
from .optim import AdamState, init_adam, adam_step
from .policy_iteration import (
    CollocationBatch,
    PolicySnapshot,
    MinimaxConfig,
    PITrainConfig,
    IterationRecord,
    IterationHistory,
    TrainingDivergedError,
    sample_collocation,
    numeric_minimax,
    policy_improvement,
    policy_controls,
    residual,
    residual_batch,
    train_policy_evaluation,
    run_policy_iteration,
    direct_pinn_train,
    estimate_sup_norm_diff,
    empirical_residual_norm,
    write_history_csv,
)
from .fdm import (
    FDMConfig,
    TimeGrid,
    FDMInstabilityError,
    DecomposedReference,
    fdm_solve_2d,
    restrict_to_target,
    interpolate,
    interpolate_batch,
    reference_nd_isotropic,
    save_grid,
    load_grid,
    grid_to_csv,
    grid_from_csv,
)
from .analysis import (
    ErrorReport,
    RateFit,
    SelectorProbeResult,
    DecompositionStats,
    relative_l2_error,
    mse,
    error_report_for_grid,
    error_report_for_reference,
    convergence_history,
    lipschitz_selector_probe,
    gradient_feedback_policy,
    euler_maruyama,
    simulate_paths,
    write_trajectories_csv,
    decomposition_residual_check,
    spearman_rho,
    emit_report,
)
from .config import ConfigError, RunConfig, parse_config

__version__ = "0.1.0"
