"""Incremental minimization laboratory for rate-independent evolutions with
small inertia and viscosity: scheme, interpolant diagnostics, energy ledgers,
jump transition costs, and sweep harnesses."""

from .spaces import (
    BoundaryCondition,
    DiscreteSpace,
    MetricOperator,
    NormFamily,
    NotSPDError,
    dirichlet_laplacian,
    lumped_mass,
)
from .dissipation import DissipationPotential, ProjectionError
from .energy import (
    DoubleWellEnergy,
    EnergyModel,
    FrozenTimeEnergy,
    QuadraticEnergy,
    ScalarToyEnergy,
    StabilityReport,
    double_well,
    double_well_prime,
    smallest_dirichlet_eigenvalue,
    stability_audit,
)
from .stepper import (
    DiscreteTrajectory,
    InnerParams,
    InnerSolveError,
    MembershipError,
    SchemeConfig,
    StateBoxError,
    StepRecord,
    TrajectoryError,
    incremental_step,
    run_trajectory,
    spot_check_minimality,
)
from .diagnostics import (
    BoundsReport,
    DefectLedger,
    EnergyLedgerRow,
    GridSampler,
    InterpolantView,
    LedgerReport,
    MismatchAccumulator,
    MismatchReport,
    NodeInequalityReport,
    audit_energy_inequality,
    build_defect_ledger,
    mismatch_report,
    node_inequality_report,
    pi_tau,
    uniform_bounds_report,
    write_bounds_csv,
    write_ledger_csv,
    write_mismatch_csv,
)
from .jumps import (
    AdmissibilityReport,
    CostEstimate,
    JumpRecord,
    ReconcileVerdict,
    TransitionPath,
    certify_admissibility,
    detect_jumps,
    reconcile_jump,
    solve_transition,
    write_jumps_csv,
)
from .harness import (
    AuditReport,
    ClassificationReport,
    Config,
    ConfigError,
    Problem,
    RunResult,
    SweepEntry,
    SweepPlan,
    SweepResult,
    audit_artifacts,
    build_problem,
    classify_solution,
    loglog_slope,
    parse_config,
    parse_config_file,
    play_oracle,
    run_single,
    run_sweep,
    write_run_artifacts,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
