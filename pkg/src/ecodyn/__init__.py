"""Eco-evolutionary community dynamics for economic activity time series.

Simulates generalized Lotka-Volterra-style community models of per-capita
export data, fits them by segmentation-based maximum likelihood, selects
among competing process models with BIC, and validates the whole procedure
on synthetic data.
"""

from .inference import (
    Dataset,
    FitConfig,
    FitError,
    FitResult,
    Segment,
    concentrated_loss,
    fit_multi_start,
    fit_single,
    log_likelihood,
    predict,
    r_squared,
    segment_partition,
)
from .integrate import (
    IntegrationFailure,
    IntegratorConfig,
    SensitivityTrajectory,
    Trajectory,
    integrate,
    integrate_general,
    integrate_with_sensitivity,
)
from .models import (
    CommunityState,
    GeneralParams,
    GlobalField,
    MeanFieldParams,
    ModelKind,
    ModelSpec,
    rhs_alpha,
    rhs_delta,
    rhs_general,
    rhs_mu,
    rhs_null,
)
from .selection import (
    Classification,
    SelectionReport,
    bic,
    build_selection_report,
    classify,
    delta_bic,
    param_count,
)
from .stats import RegressionResult, ols, standardize
from .synthetic import SweepConfig, SweepResult, generate_dataset, run_sweep

__version__ = "0.1.0"
