"""Synthetic structural models with analytically known long-model objects.

The generators expose everything the observed data hides: the latent
confounders, the long regression and representer, the true functional value
and the true confounding-strength parameters. They back the validation
harness: bias-identity checks, sharpness of the adversarial construction,
orthogonality derivatives and coverage experiments.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from itertools import product
from typing import Optional

import numpy as np
from joblib import Parallel, delayed

from .dataio import Dataset, make_fold_plan
from .dml import (
    NU2,
    SIGMA2,
    THETA,
    ComponentConfig,
    dml_solve,
    estimate_components,
    inject_nuisances,
)
from .functionals import ACD, BINARY_ATE, PLM_COEFFICIENT, FunctionalSpec
from .learners import PenalizedLinearLearner
from .sensitivity import SensitivityParams, compute_bounds, z_quantile

PLM_GAUSSIAN = "plm_gaussian"
BINARY_ATE_LOGIT = "binary_ate_logit"
ACD_GAUSSIAN = "acd_gaussian"
DGPS = (PLM_GAUSSIAN, BINARY_ATE_LOGIT, ACD_GAUSSIAN)


class SynthError(ValueError):
    """Raised for invalid synthetic-model specifications."""


@dataclass(frozen=True)
class SynthSpec:
    """Configuration of a synthetic structural model.

    Confounding strength is given either on the partial-R2 scale
    (``cy2``, ``cd2``) or as raw error second moments (``b_g``,
    ``b_alpha``); ``rho`` sets the error alignment where the model permits
    choosing it.
    """

    dgp: str
    n: int
    dims: int = 5
    cy2: Optional[float] = None
    cd2: Optional[float] = None
    b_g: Optional[float] = None
    b_alpha: Optional[float] = None
    rho: float = 1.0
    theta: float = 1.0
    propensity_slope: float = 0.8
    seed: int = 0

    def __post_init__(self):
        if self.dgp not in DGPS:
            raise SynthError(f"unknown dgp {self.dgp!r}; choose from {DGPS}")
        if self.n < 2:
            raise SynthError("need n >= 2")
        if self.dims < 1:
            raise SynthError("need at least one covariate")
        eta_form = self.cy2 is not None or self.cd2 is not None
        b_form = self.b_g is not None or self.b_alpha is not None
        if eta_form and b_form:
            raise SynthError("give either (cy2, cd2) or (b_g, b_alpha), not both")
        if eta_form:
            if self.cy2 is None or self.cd2 is None:
                raise SynthError("cy2 and cd2 must be given together")
            if not 0.0 <= self.cy2 < 1.0 or self.cd2 < 0.0:
                raise SynthError("need cy2 in [0, 1) and cd2 >= 0")
        elif b_form:
            if self.b_g is None or self.b_alpha is None:
                raise SynthError("b_g and b_alpha must be given together")
            if self.b_g < 0.0 or self.b_alpha < 0.0:
                raise SynthError("b_g and b_alpha must be nonnegative")
        else:
            object.__setattr__(self, "cy2", 0.0)
            object.__setattr__(self, "cd2", 0.0)
        if not -1.0 <= self.rho <= 1.0:
            raise SynthError("rho must lie in [-1, 1]")
        if self.dgp == BINARY_ATE_LOGIT:
            if b_form:
                raise SynthError("binary_ate_logit supports only the (cy2, cd2) form")
            if self.dims > 8:
                raise SynthError("binary_ate_logit enumerates cells; need dims <= 8")


@dataclass(frozen=True)
class AffineFunction:
    """``rows @ coef + intercept`` over a fixed-width row matrix."""

    coef: np.ndarray
    intercept: float = 0.0

    def evaluate(self, rows: np.ndarray) -> np.ndarray:
        rows = np.atleast_2d(np.asarray(rows, dtype=float))
        return rows @ np.asarray(self.coef, dtype=float) + self.intercept


@dataclass(frozen=True)
class AugmentedFunction:
    """A short-model function plus a linear term in appended latent columns."""

    base: object
    latent_coef: np.ndarray
    observed_width: int

    def evaluate(self, rows: np.ndarray) -> np.ndarray:
        rows = np.atleast_2d(np.asarray(rows, dtype=float))
        observed = rows[:, : self.observed_width]
        latent = rows[:, self.observed_width :]
        return self.base.evaluate(observed) + latent @ self.latent_coef


@dataclass(frozen=True)
class OracleBundle:
    """Ground truth for a generated dataset.

    Long-model functions evaluate on rows ``[d, x..., a...]`` (observed
    regressors with the latent columns appended); short-model functions on
    observed rows only. ``realized_a`` holds the latent draw, available to
    tests but never placed in the Dataset.
    """

    true_theta: float
    true_theta_s: float
    g_long: object
    g_short: object
    alpha_long: object
    alpha_short: object
    realized_a: np.ndarray
    true_sigma2_s: float
    true_nu2_s: float
    true_cy2: float
    true_cd2: float
    true_rho: float
    functional: FunctionalSpec
    details: dict = field(default_factory=dict)

    @property
    def true_s(self) -> float:
        return math.sqrt(self.true_sigma2_s * self.true_nu2_s)

    @property
    def true_bias_bound(self) -> float:
        return abs(self.true_rho) * self.true_s * math.sqrt(
            self.true_cy2 * self.true_cd2
        )

    def long_rows(self, data: Dataset) -> np.ndarray:
        return np.column_stack([data.wmatrix, self.realized_a])


def error_covariance_bias(bundle: OracleBundle, data: Dataset) -> float:
    """Sample version of the bias identity ``theta_s - theta``.

    The omitted-variable bias is the covariance of the regression
    approximation error with the (negated) representer approximation error:
    ``mean((g - g_s) * (alpha_s - alpha))`` over realized rows.
    """
    long_rows = bundle.long_rows(data)
    observed = data.wmatrix
    g_gap = bundle.g_long.evaluate(long_rows) - bundle.g_short.evaluate(observed)
    a_gap = bundle.alpha_short.evaluate(observed) - bundle.alpha_long.evaluate(long_rows)
    return float(np.mean(g_gap * a_gap))


def psd_sqrt(matrix: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    """Symmetric PSD square root; eigenvalues below ``tol`` are clamped to 0."""
    values, vectors = np.linalg.eigh(np.asarray(matrix, dtype=float))
    if np.any(values < -1e-8 * max(1.0, float(np.max(np.abs(values))))):
        raise ValueError("matrix is not positive semidefinite")
    values = np.where(values < tol, 0.0, values)
    return (vectors * np.sqrt(values)) @ vectors.T


# ---------------------------------------------------------------------------
# Linear-Gaussian partially linear model
# ---------------------------------------------------------------------------


def _gaussian_parameters(spec: SynthSpec) -> dict:
    """Closed-form structural coefficients hitting the requested strengths."""
    if spec.b_g is not None:
        var_g = spec.b_g**2
        if spec.b_alpha == 0.0:
            delta_norm2, tau2 = 0.0, 1.0
        else:
            tau2 = (math.sqrt(1.0 + 4.0 / spec.b_alpha**2) - 1.0) / 2.0
            delta_norm2 = 1.0
        omega2 = 1.0
    else:
        tau2 = 1.0
        delta_norm2 = spec.cd2
        omega2 = 1.0
        var_g = spec.cy2 / (1.0 - spec.cy2) * omega2
    total = delta_norm2 + tau2

    rho = spec.rho if (var_g > 0.0 and delta_norm2 > 0.0) else 0.0
    aligned = rho**2 * var_g
    orthogonal = (1.0 - rho**2) * var_g
    phi_par = -math.copysign(math.sqrt(aligned * total / tau2), rho) if rho else 0.0
    if rho == 0.0:
        orthogonal = var_g
    phi = np.array([phi_par, math.sqrt(orthogonal)])
    delta = np.array([math.sqrt(delta_norm2), 0.0])

    p = spec.dims
    gamma = 0.8 * 0.6 ** np.arange(p)
    beta = 1.0 * 0.5 ** np.arange(p)
    kappa = float(phi @ delta) / total
    return {
        "tau2": tau2,
        "omega2": omega2,
        "total": total,
        "var_g": var_g,
        "phi": phi,
        "delta": delta,
        "gamma": gamma,
        "beta": beta,
        "kappa": kappa,
    }


def _generate_gaussian(spec: SynthSpec) -> tuple[Dataset, OracleBundle]:
    par = _gaussian_parameters(spec)
    p = spec.dims
    rng = np.random.default_rng(spec.seed)
    x = rng.standard_normal((spec.n, p))
    a = rng.standard_normal((spec.n, 2))
    d = x @ par["gamma"] + a @ par["delta"] + math.sqrt(par["tau2"]) * rng.standard_normal(spec.n)
    y = (
        spec.theta * d
        + x @ par["beta"]
        + a @ par["phi"]
        + math.sqrt(par["omega2"]) * rng.standard_normal(spec.n)
    )
    data = Dataset(
        outcome=y,
        treatment=d,
        covariates=x,
        column_names=tuple(f"x{j}" for j in range(1, p + 1)),
    )

    kappa = par["kappa"]
    total = par["total"]
    theta_s = spec.theta + kappa
    g_long = AffineFunction(np.concatenate([[spec.theta], par["beta"], par["phi"]]))
    g_short = AffineFunction(np.concatenate([[theta_s], par["beta"] - kappa * par["gamma"]]))
    alpha_long = AffineFunction(
        np.concatenate([[1.0], -par["gamma"], -par["delta"]]) / par["tau2"]
    )
    alpha_short = AffineFunction(np.concatenate([[1.0], -par["gamma"]]) / total)

    var_alpha_gap = par["delta"] @ par["delta"] / (par["tau2"] * total)
    denom = math.sqrt(par["var_g"] * var_alpha_gap)
    true_rho = (-kappa / denom) if denom > 0 else 0.0
    sigma2_s = par["var_g"] + par["omega2"]
    kind = ACD if spec.dgp == ACD_GAUSSIAN else PLM_COEFFICIENT
    bundle = OracleBundle(
        true_theta=spec.theta,
        true_theta_s=theta_s,
        g_long=g_long,
        g_short=g_short,
        alpha_long=alpha_long,
        alpha_short=alpha_short,
        realized_a=a,
        true_sigma2_s=sigma2_s,
        true_nu2_s=1.0 / total,
        true_cy2=par["var_g"] / sigma2_s,
        true_cd2=(par["delta"] @ par["delta"]) / par["tau2"],
        true_rho=true_rho,
        functional=FunctionalSpec(kind).bind_columns(data.wcolumns),
        details=dict(par),
    )
    return data, bundle


# ---------------------------------------------------------------------------
# Binary-treatment logistic model
# ---------------------------------------------------------------------------


def _sigmoid(v):
    return 1.0 / (1.0 + np.exp(-v))


@dataclass(frozen=True)
class _LogitShortRegression:
    """Short outcome regression implied by integrating out the binary latent."""

    b0: np.ndarray
    theta: float
    phi: float
    c0: float
    cx: np.ndarray
    ca: float

    def _latent_mean(self, d: np.ndarray, x: np.ndarray) -> np.ndarray:
        index = self.c0 + x @ self.cx
        pi_plus = _sigmoid(index + self.ca)
        pi_minus = _sigmoid(index - self.ca)
        given_plus = np.where(d == 1.0, pi_plus, 1.0 - pi_plus)
        given_minus = np.where(d == 1.0, pi_minus, 1.0 - pi_minus)
        p_d = 0.5 * (given_plus + given_minus)
        return 0.5 * (given_plus - given_minus) / p_d

    def evaluate(self, rows: np.ndarray) -> np.ndarray:
        rows = np.atleast_2d(np.asarray(rows, dtype=float))
        d, x = rows[:, 0], rows[:, 1:]
        return x @ self.b0 + self.theta * d + self.phi * self._latent_mean(d, x)


@dataclass(frozen=True)
class _LogitShortRR:
    c0: float
    cx: np.ndarray
    ca: float

    def evaluate(self, rows: np.ndarray) -> np.ndarray:
        rows = np.atleast_2d(np.asarray(rows, dtype=float))
        d, x = rows[:, 0], rows[:, 1:]
        index = self.c0 + x @ self.cx
        p1 = 0.5 * (_sigmoid(index + self.ca) + _sigmoid(index - self.ca))
        p_d = np.where(d == 1.0, p1, 1.0 - p1)
        return (2.0 * d - 1.0) / p_d


@dataclass(frozen=True)
class _LogitLongRegression:
    b0: np.ndarray
    theta: float
    phi: float
    num_covariates: int

    def evaluate(self, rows: np.ndarray) -> np.ndarray:
        rows = np.atleast_2d(np.asarray(rows, dtype=float))
        d = rows[:, 0]
        x = rows[:, 1 : 1 + self.num_covariates]
        a = rows[:, 1 + self.num_covariates]
        return x @ self.b0 + self.theta * d + self.phi * a


@dataclass(frozen=True)
class _LogitLongRR:
    c0: float
    cx: np.ndarray
    ca: float
    num_covariates: int

    def evaluate(self, rows: np.ndarray) -> np.ndarray:
        rows = np.atleast_2d(np.asarray(rows, dtype=float))
        d = rows[:, 0]
        x = rows[:, 1 : 1 + self.num_covariates]
        a = rows[:, 1 + self.num_covariates]
        pi = _sigmoid(self.c0 + x @ self.cx + self.ca * a)
        p_d = np.where(d == 1.0, pi, 1.0 - pi)
        return (2.0 * d - 1.0) / p_d


def _logit_enumeration(p: int, c0: float, cx: np.ndarray, ca: float) -> dict:
    """Exact moments of the logistic design over all (x, a) cells."""
    cells_x = np.array(list(product((0.0, 1.0), repeat=p)))
    index = c0 + cells_x @ cx
    pi = {a: _sigmoid(index + ca * a) for a in (+1.0, -1.0)}
    p1 = 0.5 * (pi[1.0] + pi[-1.0])

    e_alpha2_long = float(np.mean(0.5 * sum(1.0 / pi[a] + 1.0 / (1.0 - pi[a]) for a in pi)))
    e_alpha2_short = float(np.mean(1.0 / p1 + 1.0 / (1.0 - p1)))

    latent_mean = {}
    for d in (1.0, 0.0):
        given_plus = pi[1.0] if d == 1.0 else 1.0 - pi[1.0]
        given_minus = pi[-1.0] if d == 1.0 else 1.0 - pi[-1.0]
        latent_mean[d] = 0.5 * (given_plus - given_minus) / (
            0.5 * (given_plus + given_minus)
        )

    # E (a - E[a|d,x])^2, weighting cells by their joint probability
    gap2 = 0.0
    for a in (+1.0, -1.0):
        for d in (1.0, 0.0):
            prob = 0.5 * (pi[a] if d == 1.0 else 1.0 - pi[a])
            gap2 += float(np.mean(prob * (a - latent_mean[d]) ** 2))

    theta_shift = float(np.mean(latent_mean[1.0] - latent_mean[0.0]))
    return {
        "e_alpha2_long": e_alpha2_long,
        "e_alpha2_short": e_alpha2_short,
        "latent_gap2": gap2,
        "theta_shift": theta_shift,
    }


def _generate_binary(spec: SynthSpec) -> tuple[Dataset, OracleBundle]:
    p = spec.dims
    c0 = 0.0
    cx = spec.propensity_slope * (-0.7) ** np.arange(p)
    b0 = 1.0 * 0.5 ** np.arange(p)

    if spec.cd2 > 0.0:
        lo, hi = 0.0, 10.0
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            moments = _logit_enumeration(p, c0, cx, mid)
            realized = moments["e_alpha2_long"] / moments["e_alpha2_short"] - 1.0
            if realized < spec.cd2:
                lo = mid
            else:
                hi = mid
        ca = 0.5 * (lo + hi)
    else:
        ca = 0.0
    moments = _logit_enumeration(p, c0, cx, ca)

    if spec.cy2 > 0.0:
        phi = 1.0
        gap2 = phi**2 * moments["latent_gap2"]
        omega2 = gap2 * (1.0 - spec.cy2) / spec.cy2
    else:
        phi = 0.0
        omega2 = 1.0
        gap2 = 0.0

    rng = np.random.default_rng(spec.seed)
    x = rng.integers(0, 2, size=(spec.n, p)).astype(float)
    a = rng.choice([-1.0, 1.0], size=spec.n)
    pi = _sigmoid(c0 + x @ cx + ca * a)
    d = (rng.random(spec.n) < pi).astype(float)
    y = x @ b0 + spec.theta * d + phi * a + math.sqrt(omega2) * rng.standard_normal(spec.n)
    data = Dataset(
        outcome=y,
        treatment=d,
        covariates=x,
        column_names=tuple(f"x{j}" for j in range(1, p + 1)),
    )

    theta_s = spec.theta + phi * moments["theta_shift"]
    sigma2_s = gap2 + omega2
    cd2_real = moments["e_alpha2_long"] / moments["e_alpha2_short"] - 1.0
    var_alpha_gap = moments["e_alpha2_long"] - moments["e_alpha2_short"]
    bias = theta_s - spec.theta
    denom = math.sqrt(gap2 * var_alpha_gap)
    true_rho = bias / denom if denom > 0 else 0.0

    bundle = OracleBundle(
        true_theta=spec.theta,
        true_theta_s=theta_s,
        g_long=_LogitLongRegression(b0=b0, theta=spec.theta, phi=phi, num_covariates=p),
        g_short=_LogitShortRegression(b0=b0, theta=spec.theta, phi=phi, c0=c0, cx=cx, ca=ca),
        alpha_long=_LogitLongRR(c0=c0, cx=cx, ca=ca, num_covariates=p),
        alpha_short=_LogitShortRR(c0=c0, cx=cx, ca=ca),
        realized_a=a[:, None],
        true_sigma2_s=sigma2_s,
        true_nu2_s=moments["e_alpha2_short"],
        true_cy2=gap2 / sigma2_s,
        true_cd2=cd2_real,
        true_rho=true_rho,
        functional=FunctionalSpec(BINARY_ATE).bind_columns(data.wcolumns),
        details={"c0": c0, "cx": cx, "ca": ca, "b0": b0, "phi": phi, "omega2": omega2},
    )
    return data, bundle


def generate(spec: SynthSpec) -> tuple[Dataset, OracleBundle]:
    """Draw a dataset from the specified structural model with its oracle."""
    if spec.dgp in (PLM_GAUSSIAN, ACD_GAUSSIAN):
        return _generate_gaussian(spec)
    return _generate_binary(spec)


# ---------------------------------------------------------------------------
# Rationalizing a requested confounding scenario
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ShortModel:
    """A dataset together with its (known or fitted) short-model functions."""

    data: Dataset
    g_short: object
    alpha_short: object
    theta_s: Optional[float] = None


def rationalize_confounding(
    rho: float, b_g: float, b_alpha: float, base: ShortModel, seed: int = 0
) -> tuple[Dataset, OracleBundle]:
    """Augment a short model with latent structure of chosen strength.

    Draws a bivariate standard-normal latent per row and adds
    ``A @ mu_g`` to the regression and ``A @ mu_a`` to the representer,
    where the stacked ``mu`` rows form the PSD square root of the targeted
    error covariance. The outcome is regenerated so its short regression is
    unchanged while part of the old residual variance is now confounded;
    ``b_g^2`` may not exceed the available residual variance.
    """
    if not -1.0 <= rho <= 1.0:
        raise SynthError("rho must lie in [-1, 1]")
    if b_g < 0.0 or b_alpha < 0.0:
        raise SynthError("b_g and b_alpha must be nonnegative")
    data = base.data
    observed = data.wmatrix
    g_s = np.asarray(base.g_short.evaluate(observed), dtype=float)
    alpha_s = np.asarray(base.alpha_short.evaluate(observed), dtype=float)

    residual_var = float(np.mean((data.outcome - g_s) ** 2))
    if b_g**2 > residual_var + 1e-12:
        raise SynthError(
            f"b_g^2 = {b_g**2:.6g} exceeds the residual variance budget "
            f"{residual_var:.6g} of the base model"
        )

    cov = np.array([[b_g**2, rho * b_g * b_alpha], [rho * b_g * b_alpha, b_alpha**2]])
    root = psd_sqrt(cov)
    mu_g, mu_a = root[0], root[1]

    rng = np.random.default_rng(seed)
    latent = rng.standard_normal((data.n, 2))
    g_gap = latent @ mu_g
    noise_var = max(residual_var - b_g**2, 0.0)
    outcome = g_s + g_gap + math.sqrt(noise_var) * rng.standard_normal(data.n)

    augmented = Dataset(
        outcome=outcome,
        treatment=data.treatment,
        covariates=data.covariates,
        column_names=data.column_names,
        group_label=data.group_label,
        treatment_name=data.treatment_name,
    )

    theta_s = (
        base.theta_s
        if base.theta_s is not None
        else float(np.mean(g_s * alpha_s))
    )
    bias = -rho * b_g * b_alpha  # theta_s - theta for this construction
    e_alpha_s2 = float(np.mean(alpha_s**2))
    bundle = OracleBundle(
        true_theta=theta_s - bias,
        true_theta_s=theta_s,
        g_long=AugmentedFunction(base.g_short, mu_g, observed.shape[1]),
        g_short=base.g_short,
        alpha_long=AugmentedFunction(base.alpha_short, mu_a, observed.shape[1]),
        alpha_short=base.alpha_short,
        realized_a=latent,
        true_sigma2_s=residual_var,
        true_nu2_s=e_alpha_s2,
        true_cy2=(b_g**2 / residual_var) if residual_var > 0 else 0.0,
        true_cd2=(b_alpha**2 / e_alpha_s2) if e_alpha_s2 > 0 else 0.0,
        true_rho=rho,
        functional=FunctionalSpec(ACD).bind_columns(data.wcolumns),
        details={"mu_g": mu_g, "mu_a": mu_a, "noise_var": noise_var},
    )
    return augmented, bundle


# ---------------------------------------------------------------------------
# Coverage experiments
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CoverageConfig:
    """Engine configuration for a coverage experiment.

    ``assumed_rho_abs`` lets the analysis posit an alignment different from
    the generating truth (e.g. adversarial bounds on non-adversarial data);
    by default the true alignment is used.
    """

    oracle_nuisances: bool = False
    num_folds: int = 5
    workers: int = 1
    l2_weight: float = 1e-8
    assumed_rho_abs: Optional[float] = None


@dataclass(frozen=True)
class CoverageSummary:
    dgp: str
    n: int
    reps: int
    failures: int
    level: float
    coverage_theta_s: float
    coverage_lower: float
    coverage_upper: float
    coverage_theta: float
    rmse_theta_s: float
    rmse_sigma2: float
    rmse_nu2: float

    def as_dict(self) -> dict:
        return {
            "dgp": self.dgp,
            "n": self.n,
            "reps": self.reps,
            "failures": self.failures,
            "level": self.level,
            "coverage_theta_s": self.coverage_theta_s,
            "coverage_lower": self.coverage_lower,
            "coverage_upper": self.coverage_upper,
            "coverage_theta": self.coverage_theta,
            "rmse_theta_s": self.rmse_theta_s,
            "rmse_sigma2": self.rmse_sigma2,
            "rmse_nu2": self.rmse_nu2,
        }


def _coverage_replication(spec: SynthSpec, rep_seed: int, a: float, config: CoverageConfig) -> dict:
    rep_spec = replace(spec, seed=rep_seed)
    data, bundle = generate(rep_spec)
    plan = make_fold_plan(data.n, config.num_folds, seed=rep_seed)

    if config.oracle_nuisances:
        fspec = bundle.functional
        if fspec.kind == PLM_COEFFICIENT:
            # the coefficient target coincides with the average derivative
            # for this linear design, which the generic engine can score
            fspec = FunctionalSpec(ACD).bind_columns(data.wcolumns)
        nuis = inject_nuisances(bundle.g_short, bundle.alpha_short, plan)
        components = (
            dml_solve(THETA, fspec, data, nuis),
            dml_solve(SIGMA2, fspec, data, nuis),
            dml_solve(NU2, fspec, data, nuis),
        )
        theta_est, sigma2_est, nu2_est = components
    else:
        learner = PenalizedLinearLearner(l2_weight=config.l2_weight)
        cfg = ComponentConfig(
            regression_learner=learner,
            riesz_method="plm",
            treatment_learner=learner,
            outcome_learner=learner,
        )
        fitted = estimate_components(data, bundle.functional, plan, cfg)
        theta_est, sigma2_est, nu2_est = fitted.as_tuple()

    rho_abs = (
        config.assumed_rho_abs
        if config.assumed_rho_abs is not None
        else abs(bundle.true_rho)
    )
    params = SensitivityParams.from_strength(
        cy2=bundle.true_cy2, cd2=bundle.true_cd2, rho_abs=rho_abs
    )
    bounds = compute_bounds(theta_est, sigma2_est, nu2_est, params, a=a)

    # population endpoints of the assumed scenario
    true_bias = rho_abs * bundle.true_s * math.sqrt(bundle.true_cy2 * bundle.true_cd2)
    true_minus = bundle.true_theta_s - true_bias
    true_plus = bundle.true_theta_s + true_bias
    z = z_quantile(a)
    return {
        "cover_theta_s": abs(theta_est.value - bundle.true_theta_s)
        <= z * theta_est.std_error,
        "cover_lower": bounds.conf_lower <= true_minus,
        "cover_upper": true_plus <= bounds.conf_upper,
        "cover_theta": bounds.conf_lower <= bundle.true_theta <= bounds.conf_upper,
        "err_theta_s": theta_est.value - bundle.true_theta_s,
        "err_sigma2": sigma2_est.value - bundle.true_sigma2_s,
        "err_nu2": nu2_est.value - bundle.true_nu2_s,
    }


def coverage_experiment(
    spec: SynthSpec,
    reps: int,
    a: float = 0.05,
    config: CoverageConfig = CoverageConfig(),
) -> CoverageSummary:
    """Monte Carlo check of the one-sided confidence-bound coverage.

    Every replication draws fresh data, estimates the components, computes
    the bounds at the true confounding strength and records whether the
    confidence bounds cover the true population bounds. Replication seeds
    are spawned deterministically, so results do not depend on execution
    order or worker count. Per-replication failures are counted, not fatal.
    """
    if reps < 1:
        raise SynthError("need at least one replication")
    children = np.random.SeedSequence(spec.seed).spawn(reps)
    seeds = [int(c.generate_state(1, dtype=np.uint64)[0]) for c in children]

    def run(seed):
        try:
            return _coverage_replication(spec, seed, a, config)
        except Exception:  # noqa: BLE001 - failures are counted in the summary
            return None

    if config.workers > 1:
        results = Parallel(n_jobs=config.workers)(delayed(run)(s) for s in seeds)
    else:
        results = [run(s) for s in seeds]

    kept = [r for r in results if r is not None]
    failures = reps - len(kept)
    if not kept:
        raise SynthError("every replication failed")

    def rate(key):
        return float(np.mean([r[key] for r in kept]))

    def rmse(key):
        return float(np.sqrt(np.mean([r[key] ** 2 for r in kept])))

    return CoverageSummary(
        dgp=spec.dgp,
        n=spec.n,
        reps=reps,
        failures=failures,
        level=a,
        coverage_theta_s=rate("cover_theta_s"),
        coverage_lower=rate("cover_lower"),
        coverage_upper=rate("cover_upper"),
        coverage_theta=rate("cover_theta"),
        rmse_theta_s=rmse("err_theta_s"),
        rmse_sigma2=rmse("err_sigma2"),
        rmse_nu2=rmse("err_nu2"),
    )
