"""Coupled fine/effective-model identification of homogenized coefficients.

A fine-scale periodic diffusion model and a constant-coefficient effective
model coexist on an annular gluing zone, weakly matched through an enriched
Lagrange multiplier space; optimizing the effective coefficient so the coarse
response is linear identifies the homogenized tensor of the fine medium.  A
periodic corrector solver provides independent reference values, and a sweep
harness runs the convergence studies.
"""

from .coefficients import CoefficientField, coefficient_zoo, sample_k_eps
from .enrichment import EnrichmentBasis, enriched_multiplier_basis, solve_psi0
from .errors import (
    ArlequinError,
    CollinearEnrichment,
    DegenerateSpec,
    InfeasibleBounds,
    InvalidConfig,
    MismatchedRegion,
    NoDescent,
    NonDivisibleGeometry,
    NonPositiveIterate,
    NonSpdCoefficient,
    SingularGram,
    SingularKkt,
    SolverFailure,
    UnknownCoefficient,
    UnknownTag,
)
from .fem import (
    CoarseSpace,
    DcCoupling,
    FineSpace,
    assemble_A1,
    assemble_Abar,
    assemble_Acheck,
    assemble_C,
    misfit_energy,
    project_WH,
)
from .geometry import (
    GAMMA,
    GAMMA_C,
    GAMMA_F,
    DomainSpec,
    Mesh,
    SubmeshMap,
    boundary_integral_weights,
    build_domain,
)
from .objective import (
    ConditionReport,
    ObjectiveEval,
    OptimizationTrace,
    check_conditions,
    convexity_probe,
    eval_J,
    optimize_matrix,
    optimize_scalar,
)
from .oracle import (
    HomogenizedTensor,
    homogenized_tensor,
    richardson_tensor,
    solve_corrector,
    voigt_reuss_bounds,
)
from .solver import (
    CoupledProblem,
    CoupledSolution,
    SolverOptions,
    problem_from_meshes,
    solve_coupled,
)

__version__ = "0.1.0"
