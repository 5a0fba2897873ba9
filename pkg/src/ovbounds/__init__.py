"""Sharp omitted-variable-bias bounds with debiased machine learning.

Estimates causal functionals of a regression function together with sharp
bounds on the bias from latent confounding, parameterized by the
explanatory power latent variables would need on the outcome and treatment
sides. Ships cross-fitted debiased estimation of every identifiable bound
component, robustness values, sensitivity contours, covariate benchmarks
and a synthetic validation harness.
"""

__version__ = "0.1.0"

from .dataio import CsvSchema, DataError, Dataset, FoldPlan, load_csv, make_fold_plan
from .dml import (
    ComponentConfig,
    ComponentSet,
    DmlError,
    DmlEstimate,
    NuisanceFit,
    dml_solve,
    estimate_components,
    fit_nuisances,
    inject_nuisances,
    median_aggregate,
    orthogonality_check,
    plm_components,
    score_covariance,
)
from .functionals import (
    ColumnExpr,
    EvaluableFunction,
    FunctionalError,
    FunctionalSpec,
    FunctionFromCallable,
    LinearBasisFunction,
    RegressionFunction,
    m_score,
    plugin_theta,
)
from .learners import (
    ConvergenceWarning,
    Dictionary,
    PenalizedLinearLearner,
    TreeEnsembleLearner,
    cross_val_mse,
    fit_penalized_linear,
    fit_tree_ensemble,
    kkt_violation,
    select_learner_cv,
    solve_penalized_quadratic,
)
from .riesz import (
    RieszError,
    RieszFit,
    fit_riesz_analytic_binary,
    fit_riesz_plm,
    fit_riesz_variational,
    select_riesz_penalty_cv,
    variational_loss,
)
from .sensitivity import (
    BenchmarkRow,
    BoundsResult,
    ContourGrid,
    SensitivityParams,
    benchmark_covariates,
    bias_bound,
    cd2_from_eta,
    compute_bounds,
    contour_grid,
    eta_from_cd2,
    eta_nonparametric,
    eta_partial,
    point_bounds,
    robustness_value,
    z_quantile,
)
from .synth import (
    CoverageConfig,
    OracleBundle,
    ShortModel,
    SynthSpec,
    coverage_experiment,
    error_covariance_bias,
    generate,
    psd_sqrt,
    rationalize_confounding,
)
