"""Acceptance suite: one test per criterion, each printing its verdict.

Run with ``pytest tests/test_acceptance.py -v -s`` to see one line per
criterion; every tolerance is pinned here.
"""

import json
import math
import os
import time

import numpy as np
import pytest

from ovbounds import (
    CoverageConfig,
    Dataset,
    FunctionalSpec,
    FunctionFromCallable,
    NuisanceFit,
    SensitivityParams,
    ShortModel,
    SynthSpec,
    coverage_experiment,
    dml_solve,
    eta_partial,
    fit_riesz_variational,
    generate,
    inject_nuisances,
    m_score,
    make_fold_plan,
    orthogonality_check,
    point_bounds,
    rationalize_confounding,
    robustness_value,
)
from ovbounds.cli import build_report, cmd_analyze
from ovbounds.functionals import BasisMatrixFunction
from ovbounds.learners import Dictionary
from tests.conftest import build_cell_dataset
from tests.test_cli import plm_config
from tests.test_sensitivity import make_estimate


def report(criterion: int, detail: str):
    print(f"\n[acceptance {criterion:02d}] PASS  {detail}", flush=True)


def fun(f):
    return FunctionFromCallable(f)


def test_criterion_01_bound_arithmetic_reproduction():
    theta_s, s = 9189.0, 119837.0
    params = SensitivityParams.from_eta(0.04, 0.03, rho_abs=1.0)

    def compute():
        bias, lower, upper = point_bounds(theta_s, s, params)
        rv = robustness_value(theta_s, s, 0.0)
        return bias, lower, upper, rv

    bias, lower, upper, rv = compute()
    assert bias == pytest.approx(4215.0, abs=1.0)
    assert lower == pytest.approx(4974.0, abs=1.0)
    assert upper == pytest.approx(13404.0, abs=1.0)
    assert rv == pytest.approx(0.074, abs=1e-3)

    best = math.inf
    for _ in range(10):
        start = time.perf_counter()
        compute()
        best = min(best, time.perf_counter() - start)
    assert best < 1e-3, f"bound arithmetic took {best * 1e3:.3f} ms"
    report(1, f"|B|={bias:.1f}, bounds=[{lower:.0f}, {upper:.0f}], RV={rv:.4f}, {best * 1e6:.0f} us")


def test_criterion_02_report_round_trip_of_injected_estimates():
    target_rv = 0.047
    theta_value = -0.701
    s = abs(theta_value) / math.sqrt(target_rv**2 / (1.0 - target_rv))
    theta = make_estimate(theta_value, 0.257, n=400)
    sigma2 = make_estimate(s, 0.05 * s, n=400)
    nu2 = make_estimate(s, 0.05 * s, n=400)

    out = build_report(
        spec=FunctionalSpec("acd").bind_columns(("d", "x1")),
        components=(theta, sigma2, nu2),
        scenarios=[SensitivityParams.from_eta(0.03, 0.03)],
        rv_thresholds=[0.0, -1.5],
        level=0.05,
        sample={"n": 400, "num_covariates": 1},
        folds={"num_folds": 5, "repeats": 1, "seeds": [0]},
        diagnostics={},
    )
    assert out["estimates"]["theta_s"]["value"] == theta_value
    assert out["estimates"]["theta_s"]["std_error"] == pytest.approx(0.257, abs=1e-12)
    rv_zero = [r for r in out["robustness_values"] if r["threshold"] == 0.0][0]
    assert round(rv_zero["rv"], 3) == target_rv
    report(2, f"theta_s={theta_value} (0.257), RV(0)={rv_zero['rv']:.3f}")


def test_criterion_03_bias_identity_oracle():
    start = time.perf_counter()
    spec = SynthSpec(
        dgp="plm_gaussian", n=1_000_000, dims=3, cy2=0.06, cd2=0.05, rho=1.0, seed=404
    )
    data, bundle = generate(spec)
    closed_form_bias = bundle.true_theta_s - bundle.true_theta

    # independent route: covariance of the two oracle gap functions,
    # propagated analytically through the joint Gaussian of (d, x, a)
    par = bundle.details
    p = spec.dims
    gamma, delta, tau2 = par["gamma"], par["delta"], par["tau2"]
    dim = 1 + p + 2
    cov = np.zeros((dim, dim))
    cov[1 : 1 + p, 1 : 1 + p] = np.eye(p)
    cov[1 + p :, 1 + p :] = np.eye(2)
    cov[0, 0] = gamma @ gamma + delta @ delta + tau2
    cov[0, 1 : 1 + p] = cov[1 : 1 + p, 0] = gamma
    cov[0, 1 + p :] = cov[1 + p :, 0] = delta

    gap_g = np.concatenate([bundle.g_long.coef[:1], bundle.g_long.coef[1:]])
    gap_g = gap_g - np.concatenate([bundle.g_short.coef, np.zeros(2)])
    gap_a = np.concatenate([bundle.alpha_short.coef, np.zeros(2)]) - bundle.alpha_long.coef
    analytic_cov = float(gap_g @ cov @ gap_a)

    rel_error = abs(analytic_cov - closed_form_bias) / abs(closed_form_bias)
    assert rel_error <= 1e-3

    # Monte Carlo cross-check on the million-row draw
    long_rows = bundle.long_rows(data)
    sampled = float(
        np.mean(
            (bundle.g_long.evaluate(long_rows) - bundle.g_short.evaluate(data.wmatrix))
            * (bundle.alpha_short.evaluate(data.wmatrix) - bundle.alpha_long.evaluate(long_rows))
        )
    )
    assert sampled == pytest.approx(closed_form_bias, rel=0.02)

    elapsed = time.perf_counter() - start
    assert elapsed < 30.0
    report(3, f"bias={closed_form_bias:.6f}, identity rel err={rel_error:.2e}, {elapsed:.1f}s")


def test_criterion_04_sharpness_of_adversarial_construction():
    start = time.perf_counter()
    base_data, base_bundle = generate(
        SynthSpec(dgp="plm_gaussian", n=100_000, dims=2, cy2=0.0, cd2=0.0, seed=505)
    )
    base = ShortModel(
        data=base_data,
        g_short=base_bundle.g_short,
        alpha_short=base_bundle.alpha_short,
        theta_s=base_bundle.true_theta_s,
    )
    b_g, b_alpha = 0.6, 0.7
    data, bundle = rationalize_confounding(1.0, b_g, b_alpha, base, seed=506)
    long_rows = bundle.long_rows(data)
    realized_bias = float(
        np.mean(
            (bundle.g_long.evaluate(long_rows) - bundle.g_short.evaluate(data.wmatrix))
            * (bundle.alpha_short.evaluate(data.wmatrix) - bundle.alpha_long.evaluate(long_rows))
        )
    )
    ratio = abs(realized_bias) / (b_g * b_alpha)
    assert 0.98 <= ratio <= 1.02
    elapsed = time.perf_counter() - start
    assert elapsed < 10.0
    report(4, f"|bias|/B = {ratio:.4f} at n=1e5, {elapsed:.1f}s")


def _orthogonality_setup(n=100_000, seed=606):
    rng = np.random.default_rng(seed)
    x = rng.uniform(size=n)
    pi = 0.3 + 0.4 * x
    d = (rng.uniform(size=n) < pi).astype(float)
    y = 1.0 + 2.0 * d + x + 0.5 * rng.normal(size=n)
    data = Dataset(outcome=y, treatment=d, covariates=x[:, None], column_names=("x1",))
    g = fun(lambda r: 1.0 + 2.0 * r[:, 0] + r[:, 1])

    def alpha(r):
        p = 0.3 + 0.4 * r[:, 1]
        return r[:, 0] / p - (1.0 - r[:, 0]) / (1.0 - p)

    spec = FunctionalSpec("binary_ate").for_dataset(data)
    plan = make_fold_plan(n, 2, seed=0)
    return data, spec, inject_nuisances(g, fun(alpha), plan), rng


def test_criterion_05_neyman_orthogonality():
    start = time.perf_counter()
    data, spec, nuis, rng = _orthogonality_setup()

    def directions(count=5, scale=0.04):
        # direction norms sized so the n=1e5 sampling noise floor sits
        # below the stated absolute tolerance
        for _ in range(count):
            c = scale * rng.normal(size=3)
            yield fun(lambda r, c=c: c[0] + c[1] * r[:, 0] + c[2] * r[:, 1])

    checks = [("theta", "g"), ("theta", "alpha"), ("sigma2", "g"), ("nu2", "alpha")]
    worst = 0.0
    for score, which in checks:
        for h in directions():
            deriv = orthogonality_check(score, spec, data, nuis, h, eps=1e-3, which=which)
            worst = max(worst, abs(deriv))
            assert abs(deriv) <= 1e-3, f"{score}/{which} derivative {deriv}"

    # contrast: same machinery at a deliberately wrong representer
    wrong_alpha = fun(lambda r: nuis.riesz.fold_function(0).evaluate(r) + 1.0)
    shifted = inject_nuisances(nuis.g_function(0), wrong_alpha, nuis.plan)
    h_const = fun(lambda r: np.full(r.shape[0], 0.05))
    contrast = orthogonality_check("theta", spec, data, shifted, h_const, eps=1e-3, which="g")
    assert abs(contrast) > 10 * 1e-3

    elapsed = time.perf_counter() - start
    assert elapsed < 60.0
    report(5, f"max |derivative|={worst:.2e}, contrast={abs(contrast):.3f}, {elapsed:.1f}s")


def test_criterion_06_representer_moment_identity():
    rng = np.random.default_rng(707)
    n = 500
    x = rng.normal(size=(n, 2))
    pi = 1.0 / (1.0 + np.exp(-(0.3 * x[:, 0] - 0.5 * x[:, 1])))
    d = (rng.uniform(size=n) < pi).astype(float)
    data = Dataset(
        outcome=rng.normal(size=n), treatment=d, covariates=x, column_names=("x1", "x2")
    )
    spec = FunctionalSpec("binary_ate").for_dataset(data)
    plan = make_fold_plan(n, 2, seed=3)
    dictionary = Dictionary(include_intercept=True, squares=False, interactions=True)
    fit = fit_riesz_variational(data, plan, spec, dictionary, l1_weight=0.0, l2_weight=0.0)

    worst = 0.0
    rows = data.wmatrix
    for fold, train, _ in plan.iter_folds():
        basis = dictionary.transform(rows[train])
        alpha = fit.fold_function(fold).evaluate(rows[train])
        moment_lhs = basis.T @ alpha / len(train)
        moment_rhs = m_score(spec, BasisMatrixFunction(dictionary), rows[train]).mean(axis=0)
        worst = max(worst, float(np.max(np.abs(moment_lhs - moment_rhs))))
    assert worst <= 1e-6
    report(6, f"max moment gap over {dictionary.width(3)} basis terms = {worst:.2e}")


def test_criterion_07_oracle_equivalence_on_discrete_toy():
    cells = [
        (0, 0.0, 1.0, 6),
        (0, 0.0, 3.0, 6),
        (1, 0.0, 2.0, 4),
        (1, 0.0, 6.0, 4),
        (0, 1.0, -1.0, 3),
        (0, 1.0, 1.0, 3),
        (1, 1.0, 4.0, 7),
        (1, 1.0, 6.0, 7),
    ]
    data = build_cell_dataset(cells)
    spec = FunctionalSpec("binary_ate").for_dataset(data)
    d, x, y = data.treatment, data.covariates[:, 0], data.outcome

    g_table, a_table = {}, {}
    for xv in (0.0, 1.0):
        p1 = float(np.mean(d[x == xv]))
        for dv in (0.0, 1.0):
            g_table[(dv, xv)] = float(np.mean(y[(d == dv) & (x == xv)]))
            a_table[(dv, xv)] = (2 * dv - 1) / (p1 if dv == 1.0 else 1.0 - p1)

    class Lookup:
        def __init__(self, table):
            self.table = table

        def evaluate(self, rows):
            rows = np.atleast_2d(rows)
            return np.array([self.table[(r[0], r[1])] for r in rows])

    g_s, alpha_s = Lookup(g_table), Lookup(a_table)
    enumerated = float(np.mean(g_s.evaluate(data.wmatrix) * alpha_s.evaluate(data.wmatrix)))
    plan = make_fold_plan(data.n, 4, seed=9)
    est = dml_solve("theta", spec, data, inject_nuisances(g_s, alpha_s, plan))
    assert est.value == pytest.approx(enumerated, abs=1e-9)
    report(7, f"dml theta={est.value:.12f} == enumerated E[g_s a_s]={enumerated:.12f}")


def test_criterion_08_one_sided_coverage():
    start = time.perf_counter()
    spec = SynthSpec(
        dgp="plm_gaussian", n=2000, dims=4, cy2=0.04, cd2=0.03, rho=1.0, seed=808
    )
    workers = min(8, os.cpu_count() or 1)
    summary = coverage_experiment(
        spec, reps=300, a=0.05, config=CoverageConfig(workers=workers)
    )
    assert summary.failures == 0
    assert 0.92 <= summary.coverage_lower <= 1.0
    assert 0.92 <= summary.coverage_upper <= 1.0
    elapsed = time.perf_counter() - start
    assert elapsed < 600.0
    report(
        8,
        f"coverage lower={summary.coverage_lower:.3f}, upper={summary.coverage_upper:.3f}, "
        f"{elapsed:.0f}s on {workers} worker(s)",
    )


def test_criterion_09_nu2_on_constant_propensity_toy():
    data, bundle = generate(
        SynthSpec(
            dgp="binary_ate_logit",
            n=10_000,
            dims=2,
            cy2=0.0,
            cd2=0.0,
            propensity_slope=0.0,
            seed=909,
        )
    )
    assert bundle.true_nu2_s == pytest.approx(4.0, abs=1e-12)
    spec = FunctionalSpec("binary_ate").for_dataset(data)
    plan = make_fold_plan(data.n, 5, seed=1)
    riesz = fit_riesz_variational(
        data, plan, spec, Dictionary(include_intercept=True, squares=False, interactions=False)
    )
    zero_g = fun(lambda r: np.zeros(r.shape[0]))
    nuis = NuisanceFit(g_per_fold=(zero_g,) * plan.num_folds, riesz=riesz, plan=plan)
    est = dml_solve("nu2", spec, data, nuis)
    assert est.value == pytest.approx(4.0, abs=0.1)
    report(9, f"nu2_hat={est.value:.4f} (analytic value 4)")


def test_criterion_10_partial_r2_arithmetic():
    value = eta_partial(0.28 + 0.03, 0.28)
    assert value == pytest.approx(0.03 / 0.72, rel=1e-12)
    assert round(value, 6) == 0.041667
    report(10, f"eta_partial(0.31, 0.28) = {value:.6f}")


def test_criterion_11_deterministic_reports(tmp_path):
    first = cmd_analyze(plm_config(), tmp_path / "a")
    second = cmd_analyze(plm_config(), tmp_path / "b")
    assert first.read_bytes() == second.read_bytes()
    report(11, f"report.json byte-identical across runs ({first.stat().st_size} bytes)")
