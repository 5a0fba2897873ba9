"""Omitted-variable-bias bounds, confidence bounds, robustness values,
contour grids and observed-covariate benchmarks.

The identifiable scale of the bias bound is ``S^2 = sigma2 * nu2`` (residual
outcome variance times the second moment of the Riesz representer). The
non-identifiable confounding strength enters through two partial-R2-style
parameters: the share ``cy2`` of residual outcome variance explained by
latent variables, and the relative increase ``cd2`` of the representer's
second moment. On the partial-R2 scale the latter is
``cd2 = eta_d2 / (1 - eta_d2)``; outside partially-linear or
homoscedastic-Gaussian treatments, ``eta_d2`` should be read as the share of
representer variance generated by latent variables rather than literally as
a treatment partial R2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from statistics import NormalDist
from typing import Optional, Sequence

import numpy as np

from .dataio import Dataset, FoldPlan
from .dml import ComponentConfig, ComponentSet, DmlEstimate, estimate_components
from .functionals import FunctionalSpec

_NORMAL = NormalDist()


def z_quantile(level: float) -> float:
    """Upper one-sided normal quantile for significance level ``level``."""
    return _NORMAL.inv_cdf(1.0 - level)


# ---------------------------------------------------------------------------
# Confounding-strength parameters
# ---------------------------------------------------------------------------


def cd2_from_eta(eta_d2: float) -> float:
    """Map the partial-R2 scale to the relative second-moment increase."""
    if not 0.0 <= eta_d2 < 1.0:
        raise ValueError(f"eta_d2 must lie in [0, 1), got {eta_d2}")
    return eta_d2 / (1.0 - eta_d2)


def eta_from_cd2(cd2: float) -> float:
    if cd2 < 0.0:
        raise ValueError(f"cd2 must be nonnegative, got {cd2}")
    return cd2 / (1.0 + cd2)


@dataclass(frozen=True)
class SensitivityParams:
    """A confounding scenario: strength on both axes and error alignment.

    ``cy2`` is the share of residual outcome variance attributed to latent
    variables (in [0, 1]); ``cd2`` the relative increase in the
    representer's second moment (>= 0); ``rho_abs`` the absolute alignment
    between the two approximation errors (1 = adversarial).
    """

    cy2: float
    cd2: float
    rho_abs: float = 1.0
    eta_y2: Optional[float] = None
    eta_d2: Optional[float] = None

    def __post_init__(self):
        if not 0.0 <= self.cy2 <= 1.0:
            raise ValueError(f"cy2 must lie in [0, 1], got {self.cy2}")
        if self.cd2 < 0.0:
            raise ValueError(f"cd2 must be nonnegative, got {self.cd2}")
        if not 0.0 <= self.rho_abs <= 1.0:
            raise ValueError(f"rho_abs must lie in [0, 1], got {self.rho_abs}")

    @classmethod
    def from_eta(cls, eta_y2: float, eta_d2: float, rho_abs: float = 1.0):
        if not 0.0 <= eta_y2 < 1.0:
            raise ValueError(f"eta_y2 must lie in [0, 1), got {eta_y2}")
        return cls(
            cy2=eta_y2,
            cd2=cd2_from_eta(eta_d2),
            rho_abs=rho_abs,
            eta_y2=eta_y2,
            eta_d2=eta_d2,
        )

    @classmethod
    def from_strength(cls, cy2: float, cd2: float, rho_abs: float = 1.0):
        return cls(cy2=cy2, cd2=cd2, rho_abs=rho_abs, eta_y2=cy2, eta_d2=eta_from_cd2(cd2))

    @property
    def strength(self) -> float:
        """The product factor ``sqrt(cy2 * cd2)`` multiplying ``S``."""
        return math.sqrt(self.cy2 * self.cd2)


def bias_bound(s_value: float, params: SensitivityParams) -> float:
    """Largest absolute bias consistent with the scenario: ``|rho| S sqrt(cy2 cd2)``."""
    if s_value < 0:
        raise ValueError("s_value must be nonnegative")
    return params.rho_abs * s_value * params.strength


# ---------------------------------------------------------------------------
# Bounds with confidence bounds
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BoundsResult:
    """Point bounds and one-sided confidence bounds for one scenario."""

    theta_s: float
    se_theta_s: float
    s_value: float
    bias_bound: float
    theta_minus: float
    theta_plus: float
    conf_lower: float
    conf_upper: float
    level: float
    params: SensitivityParams
    influence_minus: Optional[np.ndarray] = None
    influence_plus: Optional[np.ndarray] = None

    def __post_init__(self):
        if not (self.theta_minus <= self.theta_s <= self.theta_plus):
            raise ValueError("point bounds must bracket the short estimate")


def _phi_combination(
    theta: DmlEstimate, sigma2: DmlEstimate, nu2: DmlEstimate, rho_abs: float
):
    """Shared direction of the bound influence: ``phi_pm = psi_theta +- c u``."""
    s_value = math.sqrt(sigma2.value * nu2.value)
    u = (
        rho_abs
        / (2.0 * s_value)
        * (sigma2.value * nu2.influence + nu2.value * sigma2.influence)
    )
    return s_value, u


def compute_bounds(
    theta: DmlEstimate,
    sigma2: DmlEstimate,
    nu2: DmlEstimate,
    params: SensitivityParams,
    a: float = 0.05,
) -> BoundsResult:
    """Bias-adjusted bounds and one-sided confidence bounds.

    The bound endpoints ``theta_s -+ bias`` inherit asymptotic linearity;
    their influence values combine the three component influences, and the
    confidence bounds extend each endpoint by a one-sided normal quantile of
    its estimated standard error.
    """
    if not 0.0 < a <= 0.5:
        raise ValueError(f"significance level must lie in (0, 0.5], got {a}")
    if sigma2.value <= 0.0:
        raise ValueError(f"sigma2 must be positive, got {sigma2.value}")
    if nu2.value <= 0.0:
        raise ValueError(f"nu2 must be positive, got {nu2.value}")
    n = theta.n
    if sigma2.n != n or nu2.n != n:
        raise ValueError("component estimates do not share the same sample size")

    s_value, u = _phi_combination(theta, sigma2, nu2, params.rho_abs)
    c = params.strength
    bias = bias_bound(s_value, params)

    phi_minus = theta.influence - c * u
    phi_plus = theta.influence + c * u
    se_minus = math.sqrt(float(np.mean(phi_minus**2)) / n)
    se_plus = math.sqrt(float(np.mean(phi_plus**2)) / n)
    z = z_quantile(a)

    return BoundsResult(
        theta_s=theta.value,
        se_theta_s=theta.std_error,
        s_value=s_value,
        bias_bound=bias,
        theta_minus=theta.value - bias,
        theta_plus=theta.value + bias,
        conf_lower=theta.value - bias - z * se_minus,
        conf_upper=theta.value + bias + z * se_plus,
        level=a,
        params=params,
        influence_minus=phi_minus,
        influence_plus=phi_plus,
    )


def point_bounds(theta_s: float, s_value: float, params: SensitivityParams):
    """Scenario bound arithmetic from scalars: (bias, lower, upper)."""
    bias = bias_bound(s_value, params)
    return bias, theta_s - bias, theta_s + bias


# ---------------------------------------------------------------------------
# Robustness values
# ---------------------------------------------------------------------------

RV_TOL = 1e-6
RV_MAX_ITER = 200


def _equal_strength(r: float) -> SensitivityParams:
    return SensitivityParams(cy2=r, cd2=r / (1.0 - r), rho_abs=1.0, eta_y2=r, eta_d2=r)


def robustness_value(
    theta_s: float,
    s_value: float,
    threshold: float = 0.0,
    components: Optional[tuple] = None,
    a: Optional[float] = None,
    tol: float = RV_TOL,
    max_iter: int = RV_MAX_ITER,
) -> float:
    """Minimal equal confounding strength moving the bound to ``threshold``.

    With strength ``r`` on both axes (``cy2 = r``, ``cd2 = r/(1-r)``,
    adversarial alignment) the bias bound is ``S r / sqrt(1-r)``. The point
    version solves ``S r / sqrt(1-r) = |theta_s - threshold|`` in closed
    form. With a significance level ``a`` and the three component
    estimates, the confidence-bound version is solved by bisection, with
    influence-function standard errors recomputed at every candidate ``r``.
    """
    if s_value <= 0.0:
        raise ValueError("robustness value needs a positive scale S")
    gap = theta_s - threshold

    if a is None:
        t = abs(gap) / s_value
        if t == 0.0:
            return 0.0
        # stable rewrite of (sqrt(t^4 + 4 t^2) - t^2) / 2
        return 2.0 / (1.0 + math.sqrt(1.0 + 4.0 / t**2))

    if components is None:
        raise ValueError("the confidence-bound robustness value needs the component estimates")
    theta, sigma2, nu2 = components
    _, u = _phi_combination(theta, sigma2, nu2, rho_abs=1.0)
    n = theta.n
    z = z_quantile(a)
    a0 = float(np.mean(theta.influence**2))
    a1 = float(np.mean(theta.influence * u))
    a2 = float(np.mean(u**2))

    def reach(r: float) -> float:
        """Signed distance from the interval edge to the threshold."""
        c = r / math.sqrt(1.0 - r) if r > 0.0 else 0.0
        if gap >= 0.0:
            se = math.sqrt(max(a0 - 2.0 * c * a1 + c * c * a2, 0.0) / n)
            return (theta_s - s_value * c - z * se) - threshold
        se = math.sqrt(max(a0 + 2.0 * c * a1 + c * c * a2, 0.0) / n)
        return threshold - (theta_s + s_value * c + z * se)

    if reach(0.0) <= 0.0:
        return 0.0
    lo, hi = 0.0, 1.0 - 1e-12
    if reach(hi) > 0.0:  # unreachable even at maximal strength
        return hi
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        if reach(mid) > 0.0:
            lo = mid
        else:
            hi = mid
        if hi - lo < tol:
            break
    return hi


# ---------------------------------------------------------------------------
# Contour grids
# ---------------------------------------------------------------------------

GRID_QUANTITIES = ("bias", "theta_minus", "theta_plus", "conf_lower", "conf_upper")


@dataclass(frozen=True)
class ContourGrid:
    """Scenario bounds over a grid of confounding strengths.

    Rows index ``eta_y2`` (outcome axis), columns ``eta_d2`` (treatment
    axis). All five per-cell summaries are stored; ``values`` selects one.
    """

    eta_d2_axis: np.ndarray
    eta_y2_axis: np.ndarray
    bias: np.ndarray
    theta_minus: np.ndarray
    theta_plus: np.ndarray
    conf_lower: np.ndarray
    conf_upper: np.ndarray
    quantity: str
    critical_threshold: float
    level: float

    def values(self, quantity: Optional[str] = None) -> np.ndarray:
        quantity = quantity or self.quantity
        if quantity not in GRID_QUANTITIES:
            raise ValueError(f"unknown quantity {quantity!r}; choose from {GRID_QUANTITIES}")
        return getattr(self, quantity)

    def long_rows(self, quantity: Optional[str] = None):
        """Rows of (eta_d2, eta_y2, value) for CSV export."""
        values = self.values(quantity)
        out = []
        for i, ey in enumerate(self.eta_y2_axis):
            for j, ed in enumerate(self.eta_d2_axis):
                out.append((float(ed), float(ey), float(values[i, j])))
        return out

    def diagonal_crossing(self, quantity: Optional[str] = None) -> Optional[tuple]:
        """Bracket on the equal-strength diagonal where the chosen quantity
        crosses the critical threshold; needs matching axes."""
        if not np.array_equal(self.eta_d2_axis, self.eta_y2_axis):
            raise ValueError("diagonal crossing needs identical axes")
        diag = np.diag(self.values(quantity)) - self.critical_threshold
        signs = np.sign(diag)
        for i in range(signs.size - 1):
            if signs[i] != signs[i + 1]:
                return (float(self.eta_d2_axis[i]), float(self.eta_d2_axis[i + 1]))
        return None


def contour_grid(
    components: tuple,
    params_template: SensitivityParams,
    eta_d2_axis: Sequence[float],
    eta_y2_axis: Sequence[float],
    quantity: str = "conf_lower",
    threshold: float = 0.0,
    a: float = 0.05,
) -> ContourGrid:
    """Evaluate scenario bounds over a partial-R2 grid.

    Confidence-bound cells use the closed quadratic form of the influence
    combination, so a cell equals exactly what :func:`compute_bounds` would
    return for the same scenario.
    """
    theta, sigma2, nu2 = components
    eta_d2_axis = np.asarray(eta_d2_axis, dtype=float)
    eta_y2_axis = np.asarray(eta_y2_axis, dtype=float)
    if eta_d2_axis.size == 0 or eta_y2_axis.size == 0:
        raise ValueError("axes must be non-empty")
    if eta_d2_axis.max() >= 1.0 or eta_y2_axis.max() >= 1.0:
        raise ValueError("axis maxima must stay below 1 on the partial-R2 scale")
    if np.any(eta_d2_axis < 0.0) or np.any(eta_y2_axis < 0.0):
        raise ValueError("axes must be nonnegative")
    if quantity not in GRID_QUANTITIES:
        raise ValueError(f"unknown quantity {quantity!r}; choose from {GRID_QUANTITIES}")

    rho = params_template.rho_abs
    s_value, u = _phi_combination(theta, sigma2, nu2, rho)
    n = theta.n
    z = z_quantile(a)
    a0 = float(np.mean(theta.influence**2))
    a1 = float(np.mean(theta.influence * u))
    a2 = float(np.mean(u**2))

    cd2 = eta_d2_axis / (1.0 - eta_d2_axis)
    c = np.sqrt(np.outer(eta_y2_axis, cd2))  # (len(eta_y2), len(eta_d2))
    bias = rho * s_value * c
    se_minus = np.sqrt(np.maximum(a0 - 2.0 * c * a1 + c * c * a2, 0.0) / n)
    se_plus = np.sqrt(np.maximum(a0 + 2.0 * c * a1 + c * c * a2, 0.0) / n)

    return ContourGrid(
        eta_d2_axis=eta_d2_axis,
        eta_y2_axis=eta_y2_axis,
        bias=bias,
        theta_minus=theta.value - bias,
        theta_plus=theta.value + bias,
        conf_lower=theta.value - bias - z * se_minus,
        conf_upper=theta.value + bias + z * se_plus,
        quantity=quantity,
        critical_threshold=threshold,
        level=a,
    )


# ---------------------------------------------------------------------------
# Nonparametric R2
# ---------------------------------------------------------------------------


def eta_partial(eta_augmented: float, eta_baseline: float) -> float:
    """Partial nonparametric R2: ``(augmented - baseline) / (1 - baseline)``."""
    if eta_baseline >= 1.0:
        raise ValueError("baseline R2 of 1 leaves no residual variation")
    return (eta_augmented - eta_baseline) / (1.0 - eta_baseline)


def eta_nonparametric(
    values: np.ndarray,
    fitted: np.ndarray,
    baseline_fitted: Optional[np.ndarray] = None,
) -> float:
    """Nonparametric R2 ``Var(fitted) / Var(values)``, or its partial form.

    With ``baseline_fitted``, returns the additional explanatory power of
    the augmented regression relative to the baseline, on the residual
    scale of the baseline.
    """
    values = np.asarray(values, dtype=float)
    variance = float(np.var(values))
    if variance <= 0.0:
        raise ValueError("values have zero variance")
    eta = float(np.var(np.asarray(fitted, dtype=float))) / variance
    if baseline_fitted is None:
        return eta
    eta_base = float(np.var(np.asarray(baseline_fitted, dtype=float))) / variance
    return eta_partial(eta, eta_base)


# ---------------------------------------------------------------------------
# Observed-covariate benchmarks
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BenchmarkRow:
    """Explanatory-power gains from one observed covariate.

    ``delta_eta_y2``/``delta_eta_d2`` are the additive R2 gains from adding
    the covariate back; negative estimates are reported as-is and treated as
    zero when deriving implied bounds. ``rho_j`` is the sample correlation of
    the two leave-one-out approximation-error proxies and ``delta_theta``
    the change in the debiased point estimate.
    """

    covariate: str
    delta_eta_y2: float
    delta_eta_d2: float
    rho_j: float
    delta_theta: float
    eta_y2_full: float
    eta_d2_full: float
    theta_s: float
    s_value: float
    error: Optional[str] = None

    def implied_params(self, multiplier: float = 1.0, rho_abs: float = 1.0) -> SensitivityParams:
        """Scenario for a latent variable ``multiplier`` times this covariate."""
        gain_y = multiplier * max(self.delta_eta_y2, 0.0)
        gain_d = multiplier * max(self.delta_eta_d2, 0.0)
        eta_y2 = min(gain_y / (1.0 - self.eta_y2_full), 1.0 - 1e-12)
        eta_d2 = min(gain_d / (1.0 - self.eta_d2_full), 1.0 - 1e-12)
        return SensitivityParams.from_eta(eta_y2, eta_d2, rho_abs=rho_abs)

    def implied_bound_with_multiplier(self, multiplier: float = 1.0, rho_abs: float = 1.0):
        """(bias, lower, upper) for the implied scenario."""
        params = self.implied_params(multiplier, rho_abs=rho_abs)
        return point_bounds(self.theta_s, self.s_value, params)


def benchmark_covariates(
    data: Dataset,
    spec: FunctionalSpec,
    plan: FoldPlan,
    config: ComponentConfig,
    covariates: Sequence[str],
    full: Optional[ComponentSet] = None,
) -> list:
    """Leave-one-covariate-out benchmarking of explanatory power.

    Refits the outcome regression, treatment regression and representer
    without each listed covariate (same fold plan) and reports the R2
    gains, error-proxy correlation and estimate change. Per-covariate
    failures are reported in the row and do not stop the loop.
    """
    if config.treatment_learner is None:
        raise ValueError("benchmarking needs a treatment_learner for the treatment R2")
    if full is None:
        full = estimate_components(data, spec, plan, config)
    if full.treatment_oof is None:
        raise ValueError("benchmarking needs treatment regression fitted values")

    eta_y_full = eta_nonparametric(data.outcome, full.g_oof)
    eta_d_full = eta_nonparametric(data.treatment, full.treatment_oof)

    rows = []
    for name in covariates:
        try:
            reduced_data = data.drop_covariate(name)
            reduced = estimate_components(
                reduced_data, spec.for_dataset(reduced_data), plan, config
            )
            eta_y_red = eta_nonparametric(reduced_data.outcome, reduced.g_oof)
            eta_d_red = eta_nonparametric(reduced_data.treatment, reduced.treatment_oof)
            g_gap = full.g_oof - reduced.g_oof
            a_gap = full.alpha_oof - reduced.alpha_oof
            denom = math.sqrt(float(np.var(g_gap)) * float(np.var(a_gap)))
            rho_j = float(np.cov(g_gap, a_gap, ddof=0)[0, 1] / denom) if denom > 0 else 0.0
            rows.append(
                BenchmarkRow(
                    covariate=name,
                    delta_eta_y2=eta_y_full - eta_y_red,
                    delta_eta_d2=eta_d_full - eta_d_red,
                    rho_j=rho_j,
                    delta_theta=full.theta.value - reduced.theta.value,
                    eta_y2_full=eta_y_full,
                    eta_d2_full=eta_d_full,
                    theta_s=full.theta.value,
                    s_value=full.s_value,
                )
            )
        except Exception as exc:  # noqa: BLE001 - per-covariate isolation
            rows.append(
                BenchmarkRow(
                    covariate=name,
                    delta_eta_y2=float("nan"),
                    delta_eta_d2=float("nan"),
                    rho_j=float("nan"),
                    delta_theta=float("nan"),
                    eta_y2_full=eta_y_full,
                    eta_d2_full=eta_d_full,
                    theta_s=full.theta.value,
                    s_value=full.s_value,
                    error=str(exc),
                )
            )
    return rows
