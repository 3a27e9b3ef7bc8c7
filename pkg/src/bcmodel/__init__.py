"""Bounded-confidence opinion dynamics toolkit.

Finite-N stochastic simulation (discrete-time and Poisson-clock), a
deterministic kinetic solver for the mean-field density equation, and an
analysis layer for consensus classification, bifurcation scans and
empirical mean-field validation.
"""

from .agents import (
    ClusterPartition,
    ModelParams,
    OpinionState,
    Simulation,
    TrajectoryRecord,
    clusters,
    initial_state,
    interact,
    run_until_frozen,
    step_auxiliary,
    step_discrete,
    variance_drop_check,
)
from .analysis import (
    BoundVerdict,
    ChaoticityRow,
    ConsensusReport,
    ScanResult,
    bound_oracle,
    chaoticity_check,
    classify,
    classify_agents,
    first_half_center_of_mass,
    scan_delta,
    scan_extremists,
)
from .kinetic import (
    NegativityError,
    NonFiniteError,
    SolveDiagnostics,
    SolverConfig,
    derivative,
    euler_step,
    final_density,
    solve,
    stationarity_residual,
)
from .measures import (
    EmpiricalMeasure,
    MomentSummary,
    PiecewiseConstantDensity,
    PiecewiseLinearFunction,
    beta_density,
    blocks_density,
    extremists_density,
    kolmogorov_distance,
    moments,
    sample_from_density,
    uniform_density,
    wasserstein1_distance,
)

__version__ = "0.1.0"

__all__ = [
    "ClusterPartition", "ModelParams", "OpinionState", "Simulation",
    "TrajectoryRecord", "clusters", "initial_state", "interact",
    "run_until_frozen", "step_auxiliary", "step_discrete", "variance_drop_check",
    "BoundVerdict", "ChaoticityRow", "ConsensusReport", "ScanResult",
    "bound_oracle", "chaoticity_check", "classify", "classify_agents",
    "first_half_center_of_mass", "scan_delta", "scan_extremists",
    "NegativityError", "NonFiniteError", "SolveDiagnostics", "SolverConfig",
    "derivative", "euler_step", "final_density", "solve", "stationarity_residual",
    "EmpiricalMeasure", "MomentSummary", "PiecewiseConstantDensity",
    "PiecewiseLinearFunction", "beta_density", "blocks_density",
    "extremists_density", "kolmogorov_distance", "moments",
    "sample_from_density", "uniform_density", "wasserstein1_distance",
    "__version__",
]
