"""Cross-fitted debiased estimation of the bound components.

Implements the generic cross-fitting algorithm for the three Neyman
orthogonal scores needed by the sensitivity bounds: the functional value
``theta``, the squared regression residual ``sigma2``, and the second moment
of the Riesz representer ``nu2``. Every score is linear in its parameter, so
the root is a closed-form mean and the per-observation influence values
center exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .dataio import Dataset, FoldPlan
from .functionals import (
    PLM_COEFFICIENT,
    EvaluableFunction,
    FunctionalError,
    FunctionalSpec,
    PerturbedFunction,
    RegressionFunction,
    m_score,
)
from .learners import RegressionLearner
from .riesz import (
    ANALYTIC,
    PLM,
    VARIATIONAL,
    RieszError,
    RieszFit,
    fit_riesz_analytic_binary,
    fit_riesz_plm,
    fit_riesz_variational,
)

THETA = "theta"
SIGMA2 = "sigma2"
NU2 = "nu2"
SCORES = (THETA, SIGMA2, NU2)


class DmlError(RuntimeError):
    """Raised when a component estimate is unusable (e.g. nu2 <= 0)."""


@dataclass(frozen=True)
class DmlEstimate:
    """Point estimate with per-observation influence values.

    ``influence`` holds the estimated centered scores; ``std_error`` equals
    ``sqrt(mean(influence^2) / n)`` by construction.
    """

    value: float
    influence: np.ndarray
    std_error: float
    folds: int
    meta: str

    @property
    def n(self) -> int:
        return self.influence.shape[0]

    @property
    def t_value(self) -> float:
        return self.value / self.std_error if self.std_error > 0 else np.inf


def _estimate(raw_scores: np.ndarray, folds: int, meta: str) -> DmlEstimate:
    value = float(np.mean(raw_scores))
    influence = raw_scores - value
    std_error = float(np.sqrt(np.mean(influence**2) / influence.shape[0]))
    return DmlEstimate(
        value=value, influence=influence, std_error=std_error, folds=folds, meta=meta
    )


@dataclass(frozen=True)
class NuisanceFit:
    """Fold-indexed nuisance functions: regressions and Riesz representers.

    For every observation in fold ``l``, evaluations use the functions
    trained on the complement of fold ``l``.
    """

    g_per_fold: tuple
    riesz: RieszFit
    plan: FoldPlan
    diagnostics: dict = field(default_factory=dict)

    def g_function(self, fold: int) -> EvaluableFunction:
        return self.g_per_fold[fold]

    def g_oof(self, rows: np.ndarray) -> np.ndarray:
        rows = np.atleast_2d(np.asarray(rows, dtype=float))
        out = np.empty(rows.shape[0])
        for fold, _, test in self.plan.iter_folds():
            out[test] = self.g_per_fold[fold].evaluate(rows[test])
        return out


def fit_nuisances(
    data: Dataset,
    spec: FunctionalSpec,
    plan: FoldPlan,
    regression_learner: RegressionLearner,
    riesz_method: str = VARIATIONAL,
    propensity_learner: Optional[RegressionLearner] = None,
    treatment_learner: Optional[RegressionLearner] = None,
    dictionary=None,
    l1_weight: float = 0.0,
    l2_weight: float = 0.0,
    trim: float = 0.01,
    seed: int = 0,
) -> NuisanceFit:
    """Fit the outcome regression and Riesz representer fold-by-fold."""
    if spec.columns is None:
        spec = spec.for_dataset(data)
    g_fits = []
    for fold, train, _ in plan.iter_folds():
        fit = regression_learner.fit(data.wmatrix[train], data.outcome[train])
        g_fits.append(RegressionFunction(fit))

    if riesz_method == ANALYTIC:
        if propensity_learner is None:
            raise RieszError("analytic riesz method needs a propensity_learner")
        riesz = fit_riesz_analytic_binary(data, plan, propensity_learner, trim=trim, spec=spec)
    elif riesz_method == PLM:
        if treatment_learner is None:
            raise RieszError("plm riesz method needs a treatment_learner")
        riesz = fit_riesz_plm(data, plan, treatment_learner)
    elif riesz_method == VARIATIONAL:
        if dictionary is None:
            raise RieszError("variational riesz method needs a dictionary")
        riesz = fit_riesz_variational(
            data, plan, spec, dictionary, l1_weight=l1_weight, l2_weight=l2_weight, seed=seed
        )
    else:
        raise RieszError(f"unknown riesz method {riesz_method!r}")
    return NuisanceFit(g_per_fold=tuple(g_fits), riesz=riesz, plan=plan)


def inject_nuisances(
    g_fn: EvaluableFunction, alpha_fn: EvaluableFunction, plan: FoldPlan
) -> NuisanceFit:
    """Wrap known (oracle) nuisance functions in the cross-fit interface."""
    riesz = RieszFit(
        per_fold=(alpha_fn,) * plan.num_folds, plan=plan, method="injected"
    )
    return NuisanceFit(g_per_fold=(g_fn,) * plan.num_folds, riesz=riesz, plan=plan)


def dml_solve(
    score: str, spec: FunctionalSpec, data: Dataset, nuis: NuisanceFit
) -> DmlEstimate:
    """Cross-fitted root of one orthogonal score.

    theta : ``m(w, g) + (y - g(w)) a(w) - theta``
    sigma2: ``(y - g(w))^2 - sigma2``
    nu2   : ``2 m(w, a) - a(w)^2 - nu2``
    """
    if score not in SCORES:
        raise ValueError(f"unknown score {score!r}; choose from {SCORES}")
    if spec.kind == PLM_COEFFICIENT:
        raise FunctionalError(
            "the partially linear coefficient has its own pipeline; "
            "use plm_components"
        )
    if spec.columns is None:
        spec = spec.for_dataset(data)
    if spec.requires_binary:
        data.require_binary_treatment()

    rows_all = data.wmatrix
    raw = np.empty(data.n)
    for fold, _, test in nuis.plan.iter_folds():
        rows = rows_all[test]
        if score == THETA:
            g = nuis.g_function(fold)
            alpha = nuis.riesz.fold_function(fold)
            raw[test] = m_score(spec, g, rows) + (
                data.outcome[test] - g.evaluate(rows)
            ) * alpha.evaluate(rows)
        elif score == SIGMA2:
            g = nuis.g_function(fold)
            raw[test] = (data.outcome[test] - g.evaluate(rows)) ** 2
        else:
            alpha = nuis.riesz.fold_function(fold)
            values = alpha.evaluate(rows)
            raw[test] = 2.0 * m_score(spec, alpha, rows) - values**2

    estimate = _estimate(raw, nuis.plan.num_folds, score)
    if score == NU2 and estimate.value <= 0.0:
        raise DmlError(
            f"estimated second moment of the Riesz representer is "
            f"{estimate.value:.6g} <= 0, which signals a badly estimated "
            f"representer (method {nuis.riesz.method!r}); refusing to "
            "continue since the bound scale would be meaningless"
        )
    return estimate


# ---------------------------------------------------------------------------
# Partially linear pipeline
# ---------------------------------------------------------------------------


def plm_components(
    data: Dataset,
    plan: FoldPlan,
    outcome_learner: RegressionLearner,
    treatment_learner: RegressionLearner,
) -> dict:
    """Residual partialling-out estimates for the partially linear model.

    Returns the three component estimates plus the out-of-fold fitted
    values needed by benchmarking: the implied outcome regression
    ``g(d, x) = theta d + f(x)`` and the normalized treatment residual.
    ``nu2`` is the reciprocal of the mean squared treatment residual; its
    influence values come from the delta method.
    """
    yhat = np.empty(data.n)
    dhat = np.empty(data.n)
    for fold, train, test in plan.iter_folds():
        yfit = outcome_learner.fit(data.covariates[train], data.outcome[train])
        dfit = treatment_learner.fit(data.covariates[train], data.treatment[train])
        yhat[test] = yfit.predict(data.covariates[test])
        dhat[test] = dfit.predict(data.covariates[test])

    yres = data.outcome - yhat
    dres = data.treatment - dhat
    beta = float(np.mean(dres**2))
    scale = float(np.mean(data.treatment**2)) or 1.0
    if beta <= 1e-12 * scale:
        raise DmlError("treatment residual variance is zero; coefficient undefined")

    theta_value = float(np.mean(yres * dres) / beta)
    eps = yres - theta_value * dres
    alpha_oof = dres / beta

    theta_raw = eps * alpha_oof + theta_value
    theta = _estimate(theta_raw, plan.num_folds, "theta:plm")
    sigma2 = _estimate(eps**2, plan.num_folds, "sigma2:plm")

    nu2_value = 1.0 / beta
    nu2_influence = -(dres**2 - beta) / beta**2
    nu2 = DmlEstimate(
        value=nu2_value,
        influence=nu2_influence,
        std_error=float(np.sqrt(np.mean(nu2_influence**2) / data.n)),
        folds=plan.num_folds,
        meta="nu2:plm",
    )
    return {
        THETA: theta,
        SIGMA2: sigma2,
        NU2: nu2,
        "g_oof": data.outcome - eps,
        "alpha_oof": alpha_oof,
        "treatment_oof": dhat,
    }


# ---------------------------------------------------------------------------
# Orthogonality and covariance
# ---------------------------------------------------------------------------


def orthogonality_check(
    score: str,
    spec: FunctionalSpec,
    data: Dataset,
    nuis: NuisanceFit,
    direction: EvaluableFunction,
    eps: float = 1e-3,
    which: str = "g",
) -> float:
    """Finite-difference Gateaux derivative of a mean score at the nuisances.

    Perturbs the regression (``which='g'``) or the representer
    (``which='alpha'``) by ``+-eps * direction`` and returns the central
    difference of the mean score (the parameter term cancels). At true
    nuisances this is close to zero up to sampling noise.
    """
    if which not in ("g", "alpha"):
        raise ValueError("which must be 'g' or 'alpha'")
    if spec.columns is None:
        spec = spec.for_dataset(data)
    rows_all = data.wmatrix

    def mean_score(shift: float) -> float:
        total = 0.0
        for fold, _, test in nuis.plan.iter_folds():
            rows = rows_all[test]
            g = nuis.g_function(fold)
            alpha = nuis.riesz.fold_function(fold)
            if which == "g":
                g = PerturbedFunction(g, direction, shift)
            else:
                alpha = PerturbedFunction(alpha, direction, shift)
            if score == THETA:
                values = m_score(spec, g, rows) + (
                    data.outcome[test] - g.evaluate(rows)
                ) * alpha.evaluate(rows)
            elif score == SIGMA2:
                values = (data.outcome[test] - g.evaluate(rows)) ** 2
            elif score == NU2:
                a_values = alpha.evaluate(rows)
                values = 2.0 * m_score(spec, alpha, rows) - a_values**2
            else:
                raise ValueError(f"unknown score {score!r}")
            total += float(np.sum(values))
        return total / data.n

    return (mean_score(eps) - mean_score(-eps)) / (2.0 * eps)


def score_covariance(estimates: list) -> np.ndarray:
    """Empirical covariance matrix of the estimated centered scores."""
    if not estimates:
        raise ValueError("need at least one estimate")
    n = estimates[0].n
    for est in estimates:
        if est.n != n:
            raise ValueError("estimates do not share the same sample size")
    stacked = np.vstack([est.influence for est in estimates])
    return stacked @ stacked.T / n


def median_aggregate(values, std_errors) -> tuple[float, float]:
    """Aggregate repeated cross-fitting runs: median point estimate with a
    standard error that absorbs the across-run spread."""
    values = np.asarray(values, dtype=float)
    std_errors = np.asarray(std_errors, dtype=float)
    center = float(np.median(values))
    adjusted = float(np.sqrt(np.median(std_errors**2 + (values - center) ** 2)))
    return center, adjusted


# ---------------------------------------------------------------------------
# One-call component estimation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ComponentConfig:
    """Learner and Riesz choices for a full component estimation run."""

    regression_learner: RegressionLearner
    riesz_method: str = VARIATIONAL
    propensity_learner: Optional[RegressionLearner] = None
    treatment_learner: Optional[RegressionLearner] = None
    outcome_learner: Optional[RegressionLearner] = None
    dictionary: object = None
    l1_weight: float = 0.0
    l2_weight: float = 0.0
    trim: float = 0.01


@dataclass(frozen=True)
class ComponentSet:
    """The three component estimates plus out-of-fold nuisance values."""

    theta: DmlEstimate
    sigma2: DmlEstimate
    nu2: DmlEstimate
    g_oof: np.ndarray
    alpha_oof: np.ndarray
    plan: FoldPlan
    riesz_method: str
    treatment_oof: Optional[np.ndarray] = None
    diagnostics: dict = field(default_factory=dict)

    @property
    def s_value(self) -> float:
        return float(np.sqrt(self.sigma2.value * self.nu2.value))

    def as_tuple(self):
        return (self.theta, self.sigma2, self.nu2)


def estimate_components(
    data: Dataset, spec: FunctionalSpec, plan: FoldPlan, config: ComponentConfig
) -> ComponentSet:
    """Estimate theta, sigma2 and nu2 for ``spec`` under ``config``."""
    if spec.columns is None:
        spec = spec.for_dataset(data)

    if spec.kind == PLM_COEFFICIENT:
        outcome_learner = config.outcome_learner or config.regression_learner
        if config.treatment_learner is None:
            raise DmlError("the partially linear pipeline needs a treatment_learner")
        parts = plm_components(data, plan, outcome_learner, config.treatment_learner)
        return ComponentSet(
            theta=parts[THETA],
            sigma2=parts[SIGMA2],
            nu2=parts[NU2],
            g_oof=parts["g_oof"],
            alpha_oof=parts["alpha_oof"],
            treatment_oof=parts["treatment_oof"],
            plan=plan,
            riesz_method=PLM,
            diagnostics={},
        )

    nuis = fit_nuisances(
        data,
        spec,
        plan,
        config.regression_learner,
        riesz_method=config.riesz_method,
        propensity_learner=config.propensity_learner,
        treatment_learner=config.treatment_learner,
        dictionary=config.dictionary,
        l1_weight=config.l1_weight,
        l2_weight=config.l2_weight,
        trim=config.trim,
    )
    theta = dml_solve(THETA, spec, data, nuis)
    sigma2 = dml_solve(SIGMA2, spec, data, nuis)
    nu2 = dml_solve(NU2, spec, data, nuis)

    treatment_oof = None
    if config.treatment_learner is not None:
        treatment_oof = np.empty(data.n)
        for fold, train, test in plan.iter_folds():
            fit = config.treatment_learner.fit(
                data.covariates[train], data.treatment[train]
            )
            treatment_oof[test] = fit.predict(data.covariates[test])

    return ComponentSet(
        theta=theta,
        sigma2=sigma2,
        nu2=nu2,
        g_oof=nuis.g_oof(data.wmatrix),
        alpha_oof=nuis.riesz.oof_values(data.wmatrix),
        treatment_oof=treatment_oof,
        plan=plan,
        riesz_method=nuis.riesz.method,
        diagnostics=dict(nuis.riesz.diagnostics),
    )
