"""Weak-error toolkit for one-dimensional SDEs with superlinear polynomial
coefficients.

The pieces, bottom up: model descriptions and parameter hypothesis checks
(models), keyed Gaussian streams (paths), the positivity-preserving
exponential step plus tamed/symmetrized comparison schemes (schemes), the
Monte Carlo engine with divergence accounting (montecarlo), analytic and
fine-grid reference expectations (reference), convergence-rate fits and
CSV reporting (analysis), and the command-line front end (cli).
"""

from .analysis import (
    CaseTableReport,
    InsufficientDataError,
    RateFit,
    build_case_table,
    fit_rate,
    render_compare_csv,
    write_detail_csv,
    write_summary_csv,
)
from .cli import CASES, main
from .models import (
    GeneralDriftModel,
    HypothesisReport,
    PrototypeModel,
    check_hypotheses,
    drift_eval,
    kappa,
)
from .montecarlo import (
    TEST_FUNCTIONS,
    AllDivergedError,
    Estimate,
    WeakErrorTable,
    estimate_expectation,
    estimate_many,
    exp_moment_estimate,
    moment_sweep,
    weak_error_sweep,
)
from .paths import GaussianStream, ZeroStream, make_stream
from .reference import (
    DivergentIntegralError,
    QuadratureNotConverged,
    ReferenceMethod,
    ReferenceValue,
    UnreliableReferenceError,
    adaptive_quadrature,
    analytic_first_moment,
    analytic_second_moment,
    chi_square_moment,
    fine_grid_reference,
    gamma_function,
)
from .schemes import (
    DIVERGENCE_CAP,
    SchemeKind,
    SchemeState,
    StepInput,
    simulate_terminal,
    step_exp_es,
    step_explicit_exp_euler,
    step_ses,
    step_sms,
    step_stes,
    step_tes,
    step_values,
)

__version__ = "0.1.0"

__all__ = [
    "__version__",
    "CASES", "main",
    "PrototypeModel", "GeneralDriftModel", "HypothesisReport",
    "check_hypotheses", "drift_eval", "kappa",
    "GaussianStream", "ZeroStream", "make_stream",
    "SchemeKind", "SchemeState", "StepInput", "DIVERGENCE_CAP",
    "step_exp_es", "step_explicit_exp_euler", "step_ses", "step_sms",
    "step_tes", "step_stes", "step_values", "simulate_terminal",
    "Estimate", "WeakErrorTable", "AllDivergedError", "TEST_FUNCTIONS",
    "estimate_expectation", "estimate_many", "weak_error_sweep",
    "moment_sweep", "exp_moment_estimate",
    "ReferenceMethod", "ReferenceValue", "DivergentIntegralError",
    "QuadratureNotConverged", "UnreliableReferenceError",
    "gamma_function", "adaptive_quadrature", "analytic_first_moment",
    "analytic_second_moment", "chi_square_moment", "fine_grid_reference",
    "RateFit", "InsufficientDataError", "fit_rate", "CaseTableReport",
    "build_case_table", "write_detail_csv", "write_summary_csv",
    "render_compare_csv",
]
