"""Cross-fitted estimation of the Riesz representer of a target functional.

Three routes are provided: the analytic inverse-propensity form for binary
treatments, the residual partialling-out form for partially linear models,
and a variational penalized-linear estimator that needs no analytic form and
never inverts propensities.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .dataio import Dataset, FoldPlan
from .functionals import (
    BINARY_APO,
    BINARY_ATE,
    DISTRIBUTION_SHIFT,
    POLICY_TRANSPORT,
    BasisMatrixFunction,
    ColumnExpr,
    EvaluableFunction,
    FunctionalSpec,
    LinearBasisFunction,
    m_score,
)
from .learners import Dictionary, RegressionLearner, solve_penalized_quadratic

ANALYTIC = "analytic"
PLM = "plm"
VARIATIONAL = "variational"

DEFAULT_TRIM = 0.01


class RieszError(ValueError):
    """Raised when a Riesz representer cannot be estimated as requested."""


@dataclass(frozen=True)
class RieszFit:
    """Per-fold Riesz representer functions plus the plan that made them."""

    per_fold: tuple
    plan: FoldPlan
    method: str
    diagnostics: dict = field(default_factory=dict)

    def fold_function(self, fold: int) -> EvaluableFunction:
        return self.per_fold[fold]

    def oof_values(self, rows: np.ndarray) -> np.ndarray:
        """Evaluate each row with the function not trained on its fold.

        ``rows`` must be aligned with the fold plan (one row per
        observation, in dataset order).
        """
        rows = np.atleast_2d(np.asarray(rows, dtype=float))
        if rows.shape[0] != self.plan.n:
            raise ValueError("rows are not aligned with the fold plan")
        out = np.empty(rows.shape[0])
        for fold, _, test in self.plan.iter_folds():
            out[test] = self.per_fold[fold].evaluate(rows[test])
        return out


# ---------------------------------------------------------------------------
# Analytic binary-treatment route
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class _AnalyticBinaryRR:
    propensity_fit: object
    trim: float
    kind: str
    apo_level: Optional[int]
    weight: Optional[str]
    columns: tuple

    def _pi(self, covariates: np.ndarray) -> np.ndarray:
        raw = np.asarray(self.propensity_fit.predict(covariates), dtype=float)
        return np.clip(raw, self.trim, 1.0 - self.trim)

    def evaluate(self, rows: np.ndarray) -> np.ndarray:
        rows = np.atleast_2d(np.asarray(rows, dtype=float))
        d = rows[:, 0]
        pi = self._pi(rows[:, 1:])
        if self.kind == BINARY_ATE:
            values = d / pi - (1.0 - d) / (1.0 - pi)
        elif self.apo_level == 1:
            values = (d == 1.0) / pi
        else:
            values = (d == 0.0) / (1.0 - pi)
        if self.weight is not None:
            env = {name: rows[:, j] for j, name in enumerate(self.columns)}
            values = values * ColumnExpr(self.weight).evaluate(env)
        return values


def fit_riesz_analytic_binary(
    data: Dataset,
    plan: FoldPlan,
    propensity_learner: RegressionLearner,
    trim: float = DEFAULT_TRIM,
    spec: Optional[FunctionalSpec] = None,
) -> RieszFit:
    """Inverse-propensity Riesz representer for a binary treatment.

    The propensity is regression-estimated per fold on the complement
    sample and clipped to ``[trim, 1 - trim]``; out-of-fold clipping counts
    are surfaced in the diagnostics. A covariate-only weight multiplies the
    representer; weights that depend on the treatment have no analytic
    simplification here and are rejected (use the variational route
    instead).
    """
    data.require_binary_treatment()
    if not 0.0 < trim < 0.5:
        raise RieszError("trim must lie in (0, 0.5)")
    if spec is None:
        spec = FunctionalSpec(BINARY_ATE).for_dataset(data)
    elif spec.columns is None:
        spec = spec.for_dataset(data)
    if spec.kind not in (BINARY_ATE, BINARY_APO):
        raise RieszError(f"analytic binary route does not apply to {spec.kind!r}")
    if spec.weight is not None:
        used = ColumnExpr(spec.weight).variables()
        if data.treatment_name in used:
            raise RieszError(
                "analytic route needs a covariate-only weight; "
                f"{spec.weight!r} references the treatment"
            )

    d = data.treatment
    fns = []
    clipped = 0
    for fold, train, test in plan.iter_folds():
        if np.all(d[train] == 1.0) or np.all(d[train] == 0.0):
            raise RieszError(f"training split for fold {fold} is all-treated or all-control")
        fit = propensity_learner.fit(data.covariates[train], d[train])
        raw = np.asarray(fit.predict(data.covariates[test]), dtype=float)
        clipped += int(np.sum((raw < trim) | (raw > 1.0 - trim)))
        fns.append(
            _AnalyticBinaryRR(
                propensity_fit=fit,
                trim=trim,
                kind=spec.kind,
                apo_level=spec.apo_level,
                weight=spec.weight,
                columns=spec.wnames(1 + data.p),
            )
        )
    return RieszFit(
        per_fold=tuple(fns),
        plan=plan,
        method=ANALYTIC,
        diagnostics={"trimmed_count": clipped, "trim": trim},
    )


# ---------------------------------------------------------------------------
# Partialling-out route
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class _ResidualRR:
    treatment_fit: object
    denominator: float

    def evaluate(self, rows: np.ndarray) -> np.ndarray:
        rows = np.atleast_2d(np.asarray(rows, dtype=float))
        fitted = np.asarray(self.treatment_fit.predict(rows[:, 1:]), dtype=float)
        return (rows[:, 0] - fitted) / self.denominator


def fit_riesz_plm(
    data: Dataset, plan: FoldPlan, treatment_learner: RegressionLearner
) -> RieszFit:
    """Partialling-out Riesz representer ``(d - E[d|x]) / E(d - E[d|x])^2``.

    The treatment regression is fit per fold on held-out data; the
    denominator is the sample mean of out-of-fold squared residuals, shared
    by every fold function.
    """
    fits = []
    residuals = np.empty(data.n)
    for fold, train, test in plan.iter_folds():
        fit = treatment_learner.fit(data.covariates[train], data.treatment[train])
        fits.append(fit)
        residuals[test] = data.treatment[test] - np.asarray(
            fit.predict(data.covariates[test]), dtype=float
        )
    denominator = float(np.mean(residuals**2))
    scale = float(np.mean(data.treatment**2)) or 1.0
    if denominator <= 1e-12 * scale:
        raise RieszError(
            "treatment residual variance is zero; the partialling-out "
            "representer is undefined"
        )
    fns = tuple(_ResidualRR(fit, denominator) for fit in fits)
    return RieszFit(
        per_fold=fns,
        plan=plan,
        method=PLM,
        diagnostics={"residual_second_moment": denominator},
    )


# ---------------------------------------------------------------------------
# Variational route
# ---------------------------------------------------------------------------

GRAM_MEMORY_BUDGET_MB = 512


def _hull_outside_count(reference: np.ndarray, candidate: np.ndarray) -> int:
    """Rows of ``candidate`` outside the per-column range of ``reference``.

    A cheap bounding-box stand-in for a support check; flagged, never
    enforced.
    """
    lo = reference.min(axis=0)
    hi = reference.max(axis=0)
    outside = np.any((candidate < lo) | (candidate > hi), axis=1)
    return int(np.sum(outside))


def _variational_coef(
    spec: FunctionalSpec,
    dictionary: Dictionary,
    rows: np.ndarray,
    l1_weight: float,
    l2_weight: float,
    tol: float,
    max_sweeps: int,
) -> tuple[np.ndarray, dict]:
    basis = dictionary.transform(rows)
    n, q = basis.shape
    gram = basis.T @ basis / n
    moment = m_score(spec, BasisMatrixFunction(dictionary), rows)
    if moment.ndim == 1:  # single-column dictionary
        moment = moment[:, None]
    moment_vec = moment.mean(axis=0)

    # penalties act on the standardized scale; the quadratic term keeps the
    # raw second-moment matrix so the first-order conditions are the moment
    # identities of the representer
    scale = basis.std(axis=0)
    coef, info = solve_penalized_quadratic(
        2.0 * gram,
        2.0 * moment_vec,
        l1=l1_weight * scale,
        l2=l2_weight * scale**2,
        tol=tol,
        max_sweeps=max_sweeps,
    )
    loss = float(coef @ gram @ coef - 2.0 * coef @ moment_vec)
    info = dict(info, loss=loss, num_terms=q)
    return coef, info


def fit_riesz_variational(
    data: Dataset,
    plan: FoldPlan,
    spec: FunctionalSpec,
    dictionary: Dictionary,
    l1_weight: float = 0.0,
    l2_weight: float = 0.0,
    seed: int = 0,
    tol: float = 1e-9,
    max_sweeps: int = 50_000,
    gram_memory_budget_mb: int = GRAM_MEMORY_BUDGET_MB,
) -> RieszFit:
    """Penalized-linear Riesz representer via its variational loss.

    Per training fold, minimizes the empirical ``mean(a(w)^2 - 2 m(w, a))``
    over linear combinations ``a = coef @ basis``; by linearity of the score
    this is the penalized quadratic ``coef' G coef - 2 coef' M`` with
    ``G`` the basis second-moment matrix and ``M`` the per-basis score
    means, solved by coordinate descent. No propensities are inverted.
    """
    del seed  # cyclic coordinate descent is deterministic
    if spec.columns is None:
        spec = spec.for_dataset(data)
    if spec.requires_binary:
        data.require_binary_treatment()

    q = dictionary.width(1 + data.p)
    gram_mb = q * q * 8 / 2**20
    if gram_mb > gram_memory_budget_mb:
        raise RieszError(
            f"dictionary of {q} columns needs ~{gram_mb:.0f} MiB for its "
            f"second-moment matrix (budget {gram_memory_budget_mb} MiB); "
            "reduce Dictionary.max_columns or disable interaction terms"
        )

    rows_all = data.wmatrix
    fns = []
    fold_info = []
    for fold, train, test in plan.iter_folds():
        coef, info = _variational_coef(
            spec, dictionary, rows_all[train], l1_weight, l2_weight, tol, max_sweeps
        )
        fns.append(LinearBasisFunction(dictionary=dictionary, coef=coef))
        fold_info.append(info)

    diagnostics = {
        "l1_weight": l1_weight,
        "l2_weight": l2_weight,
        "folds": fold_info,
    }
    if spec.kind == DISTRIBUTION_SHIFT:
        target, baseline = spec.shift_samples
        diagnostics["shift_rows_outside_hull"] = _hull_outside_count(
            rows_all, np.vstack([target, baseline])
        )
    if spec.kind == POLICY_TRANSPORT:
        names = spec.wnames(rows_all.shape[1])
        env = {name: rows_all[:, j] for j, name in enumerate(names)}
        transported = rows_all.copy()
        for column, expr in spec.transport.items():
            transported[:, names.index(column)] = np.broadcast_to(
                ColumnExpr(expr).evaluate(env), (rows_all.shape[0],)
            )
        diagnostics["transported_rows_outside_hull"] = _hull_outside_count(
            rows_all, transported
        )
    return RieszFit(per_fold=tuple(fns), plan=plan, method=VARIATIONAL, diagnostics=diagnostics)


def variational_loss(
    spec: FunctionalSpec, fn: EvaluableFunction, rows: np.ndarray
) -> float:
    """Held-out value of the variational objective ``mean(a^2 - 2 m(., a))``."""
    alpha = fn.evaluate(rows)
    score = m_score(spec, fn, rows)
    return float(np.mean(alpha**2 - 2.0 * score))


def select_riesz_penalty_cv(
    data: Dataset,
    plan: FoldPlan,
    spec: FunctionalSpec,
    dictionary: Dictionary,
    l1_grid: tuple = (0.0, 1e-4, 1e-3, 1e-2, 1e-1),
    l2_grid: tuple = (0.0,),
    **fit_kwargs,
) -> tuple[float, float]:
    """Pick (l1, l2) minimizing the cross-validated variational loss."""
    if spec.columns is None:
        spec = spec.for_dataset(data)
    rows_all = data.wmatrix
    best = None
    for l1 in l1_grid:
        for l2 in l2_grid:
            fit = fit_riesz_variational(
                data, plan, spec, dictionary, l1_weight=l1, l2_weight=l2, **fit_kwargs
            )
            losses = [
                variational_loss(spec, fit.fold_function(fold), rows_all[test])
                for fold, _, test in plan.iter_folds()
            ]
            score = float(np.mean(losses))
            if best is None or score < best[0]:
                best = (score, l1, l2)
    return best[1], best[2]
