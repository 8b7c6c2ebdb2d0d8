"""Stagewise boosting for distributional regression.

Variable selection and coefficient estimation for multi-parameter response
distributions via semi-constant stagewise updates, best-subset parameter
updating, correlation filtering, BIC early stopping and a batchwise variant
for large data, plus a gradient-boosting baseline and a simulation lab.
"""

from .exceptions import InputError, NumericError
from .families import FAMILIES, Family, get_family
from .data import (
    BatchSchedule,
    Dataset,
    Standardization,
    build_dataset,
    intercept_adjustment,
    load_csv,
    make_batches,
    standardize,
    zero_positive_strata,
)
from .engine import (
    CoefficientState,
    FitConfig,
    FitResult,
    RefitResult,
    best_subset_step,
    bic,
    correlation_filter,
    fit_and_refit,
    gradient_vector,
    init_state,
    kappa_auto,
    refit,
    sbdr_fit,
    select_candidate,
    semi_constant_step,
    state_at,
    threshold_descent,
)
from .baseline import GBConfig, cv_mstop, gb_fit, var_deselect
from .simlab import (
    MetricsRow,
    ScenarioSpec,
    evaluate,
    gen_covariates,
    gen_response,
    run_method,
    run_scenario,
)

__version__ = "0.1.0"
