"""Model-free LQR learning for LTI networks with snapshot compression.

Learns linear-quadratic state-feedback controllers for unknown stable
(or semi-stable) continuous-time networks purely from measured
trajectories.  Snapshot-SVD compression shrinks the policy-iteration
least squares from the full state dimension to a small dominant
subspace, and the analysis tools quantify the stability and performance
price of that compression.
"""

from .analysis import (
    CostReport,
    RiccatiSolution,
    SmallGainResult,
    epsilon_bound,
    evaluate_controller,
    h2_norm,
    hinf_norm,
    kleinman_riccati,
    lqr_cost,
    lyapunov_solve,
    small_gain_certificate,
    spectrum,
)
from .benchmarks import (
    ConsensusConfig,
    ExperimentReport,
    NoiseConfig,
    SamplingConfig,
    collect_case1_record,
    gen_consensus,
    gen_oscillator_semistable,
    run_case1,
)
from .compression import (
    DataMatrices,
    Gramian,
    ProjectionMatrix,
    build_data_matrices,
    complement_basis,
    deflate_semistable,
    empirical_gramian,
    epsilon_hat,
    fit_projection,
    projection_from_gramian,
)
from .estimators import OffPolicyLqr, SnapshotProjection
from .exceptions import (
    ConvergenceError,
    RankDeficientDataError,
    SimulationError,
    SnapLqrError,
    StabilityError,
)
from .policy import (
    LqrWeights,
    PolicyResult,
    RankCheck,
    policy_improvement_step,
    rank_check,
    run_off_policy,
    run_preconditioned,
)
from .systems import (
    LtiSystem,
    SignalGenerator,
    SnapshotRecord,
    exploration_noise,
    impulse_responses,
    refine_grid,
    save_trajectory_csv,
    simulate,
)

__version__ = "0.1.0"

__all__ = [
    "CostReport",
    "RiccatiSolution",
    "SmallGainResult",
    "epsilon_bound",
    "evaluate_controller",
    "h2_norm",
    "hinf_norm",
    "kleinman_riccati",
    "lqr_cost",
    "lyapunov_solve",
    "small_gain_certificate",
    "spectrum",
    "ConsensusConfig",
    "ExperimentReport",
    "NoiseConfig",
    "SamplingConfig",
    "collect_case1_record",
    "gen_consensus",
    "gen_oscillator_semistable",
    "run_case1",
    "DataMatrices",
    "Gramian",
    "ProjectionMatrix",
    "build_data_matrices",
    "complement_basis",
    "deflate_semistable",
    "empirical_gramian",
    "epsilon_hat",
    "fit_projection",
    "projection_from_gramian",
    "OffPolicyLqr",
    "SnapshotProjection",
    "ConvergenceError",
    "RankDeficientDataError",
    "SimulationError",
    "SnapLqrError",
    "StabilityError",
    "LqrWeights",
    "PolicyResult",
    "RankCheck",
    "policy_improvement_step",
    "rank_check",
    "run_off_policy",
    "run_preconditioned",
    "LtiSystem",
    "SignalGenerator",
    "SnapshotRecord",
    "exploration_noise",
    "impulse_responses",
    "refine_grid",
    "save_trajectory_csv",
    "simulate",
]
