"""Monotone iterative solvers for psi-Hilfer fractional boundary value problems."""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    AccuracyLossError,
    ConfigurationError,
    DomainError,
    EvaluationError,
    HypothesisViolation,
    PsiHilferError,
)
from .specfun import MLParams, beta, gamma, mittag_leffler  # noqa: E402
from .psi_core import (  # noqa: E402
    GradedMesh,
    OrderParams,
    PsiMap,
    WeightedGridFunction,
    frac_integral,
    frac_integral_grid,
    frac_integral_semigroup_residual,
    graded_mesh,
    hilfer_derivative,
    partial_order_leq,
    weighted_norm,
)
from .linear import (  # noqa: E402
    LinearProblem,
    XiParams,
    check_comparison_thm1,
    check_comparison_thm2,
    check_comparison_thm3,
    decreasing_root_diagnostic,
    defect_lower,
    defect_upper,
    solve_linear_bvp,
    solve_linear_ivp,
    xi,
)
from .monotone import (  # noqa: E402
    ContractionData,
    IterationConfig,
    IterationReport,
    NonlinearProblem,
    apply_operator_A,
    compute_omega,
    contraction_check,
    monotone_solve,
    picard_unique_solve,
    verify_nonlinear_lower,
    verify_nonlinear_upper,
)
from .expr import compile_expr, evaluate, parse, to_source  # noqa: E402
