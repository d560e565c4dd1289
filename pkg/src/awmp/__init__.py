"""Solver and diagnostics for mixed-constrained optimal control.

The package generates iterate sequences with a method of multipliers,
measures them against the asymptotic first-order residual system,
searches for classical weak-maximum-principle certificates, and grades
constraint-qualification evidence from multiplier growth.
"""

from .model import (
    AffineEquality,
    Box,
    ControlProblem,
    EndpointSet,
    FeasibilityResiduals,
    FixedBoth,
    FixedInitial,
    Free,
    MultiplierSet,
    Process,
    eval_hamiltonian,
    feasibility_report,
    finite_difference_check,
    g_minus,
    g_plus,
    grad_hamiltonian,
    normal_cone_violation,
    project_box,
)
from .transcription import (
    DiscreteNLP,
    TimeGrid,
    grid_norms,
    lift_multipliers,
    make_grid,
    transcribe,
    unlift_multipliers,
)
from .monitor import (
    AwmpResidualReport,
    CertificateVerdict,
    WmpCertificate,
    aggregate_wmp_residual,
    compute_awmp_residuals,
    extract_M_tuple,
    mdelta_membership_residual,
    normalize_multipliers,
    split_normal_cone,
    wmp_certificate_search,
)
from .solver import (
    InnerFailureError,
    IterateRecord,
    SolveResult,
    SolveStatus,
    SolverConfig,
    inner_solve,
    projected_gradient,
    solve,
    update_multipliers,
)
from .diagnostics import (
    CqReport,
    CqVerdict,
    DiagnosticsConfig,
    accq_ratio,
    diagnose,
    regularity_verdict,
    track_bounds,
)
from .problems import (
    AnalyticBundle,
    NamedProblem,
    analytic_awmp_iterate,
    discrete_optimal_process,
    get_problem,
    problem_names,
)

__version__ = "0.1.0"
