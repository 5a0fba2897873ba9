import math
from dataclasses import replace

import numpy as np
import pytest

from ovbounds import (
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
from ovbounds.synth import SynthError


class TestGaussianModel:
    def test_no_confounding_equates_parameters(self):
        data, bundle = generate(
            SynthSpec(dgp="plm_gaussian", n=500, dims=3, cy2=0.0, cd2=0.0, seed=1)
        )
        assert bundle.true_theta == bundle.true_theta_s
        assert bundle.true_cy2 == 0.0 and bundle.true_cd2 == 0.0

    def test_requested_strengths_are_realized(self):
        spec = SynthSpec(dgp="plm_gaussian", n=10, dims=4, cy2=0.07, cd2=0.12, rho=-0.6, seed=2)
        _, bundle = generate(spec)
        assert bundle.true_cy2 == pytest.approx(0.07, abs=1e-12)
        assert bundle.true_cd2 == pytest.approx(0.12, abs=1e-12)
        assert bundle.true_rho == pytest.approx(-0.6, abs=1e-12)

    def test_population_quantities_match_monte_carlo(self):
        # brute-force check of the closed-form moments on a large draw
        spec = SynthSpec(dgp="plm_gaussian", n=400_000, dims=3, cy2=0.1, cd2=0.2, rho=0.8, seed=3)
        data, bundle = generate(spec)
        rows = data.wmatrix
        long_rows = bundle.long_rows(data)
        g_s = bundle.g_short.evaluate(rows)
        g = bundle.g_long.evaluate(long_rows)
        a_s = bundle.alpha_short.evaluate(rows)
        a = bundle.alpha_long.evaluate(long_rows)

        assert np.mean((data.outcome - g_s) ** 2) == pytest.approx(
            bundle.true_sigma2_s, rel=0.02
        )
        assert np.mean(a_s**2) == pytest.approx(bundle.true_nu2_s, rel=0.02)
        assert np.mean((g - g_s) ** 2) / np.mean((data.outcome - g_s) ** 2) == pytest.approx(
            bundle.true_cy2, rel=0.05
        )
        assert (np.mean(a**2) - np.mean(a_s**2)) / np.mean(a_s**2) == pytest.approx(
            bundle.true_cd2, rel=0.05
        )
        corr = np.corrcoef(g - g_s, a - a_s)[0, 1]
        assert corr == pytest.approx(bundle.true_rho, abs=0.02)

    def test_bias_identity_closed_form_vs_monte_carlo(self):
        spec = SynthSpec(
            dgp="plm_gaussian", n=1_000_000, dims=3, cy2=0.06, cd2=0.05, rho=1.0, seed=4
        )
        data, bundle = generate(spec)
        closed_form = bundle.true_theta_s - bundle.true_theta
        sampled = error_covariance_bias(bundle, data)
        assert sampled == pytest.approx(closed_form, rel=1e-2)
        assert closed_form != 0.0

    def test_projection_orthogonality_of_gaps(self):
        # approximation errors are orthogonal to observable test functions
        spec = SynthSpec(dgp="plm_gaussian", n=400_000, dims=2, cy2=0.1, cd2=0.1, seed=5)
        data, bundle = generate(spec)
        rows = data.wmatrix
        long_rows = bundle.long_rows(data)
        g_gap = bundle.g_long.evaluate(long_rows) - bundle.g_short.evaluate(rows)
        a_gap = bundle.alpha_long.evaluate(long_rows) - bundle.alpha_short.evaluate(rows)
        for h in (rows[:, 0], rows[:, 1], np.ones(data.n)):
            scale = math.sqrt(float(np.mean(g_gap**2)) * float(np.mean(h**2))) or 1.0
            assert abs(np.mean(g_gap * h)) / scale < 0.02
            assert abs(np.mean(a_gap * h)) < 0.02

    def test_reproducible_bit_exact(self):
        spec = SynthSpec(dgp="plm_gaussian", n=100, dims=2, cy2=0.1, cd2=0.1, seed=11)
        a, _ = generate(spec)
        b, _ = generate(spec)
        assert np.array_equal(a.outcome, b.outcome)
        assert np.array_equal(a.treatment, b.treatment)
        assert np.array_equal(a.covariates, b.covariates)

    def test_b_form_strength(self):
        spec = SynthSpec(dgp="plm_gaussian", n=10, dims=2, b_g=0.5, b_alpha=0.3, rho=1.0, seed=0)
        _, bundle = generate(spec)
        var_g = bundle.true_cy2 * bundle.true_sigma2_s
        assert var_g == pytest.approx(0.25, abs=1e-10)
        var_alpha_gap = bundle.true_cd2 * bundle.true_nu2_s
        assert var_alpha_gap == pytest.approx(0.09, abs=1e-10)

    def test_acd_variant_shares_design(self):
        _, bundle = generate(SynthSpec(dgp="acd_gaussian", n=10, dims=2, cy2=0.1, cd2=0.1, seed=0))
        assert bundle.functional.kind == "acd"


class TestBinaryModel:
    def test_constant_propensity_representer_values(self):
        spec = SynthSpec(
            dgp="binary_ate_logit",
            n=200,
            dims=2,
            cy2=0.0,
            cd2=0.0,
            propensity_slope=0.0,
            seed=6,
        )
        data, bundle = generate(spec)
        values = bundle.alpha_short.evaluate(data.wmatrix)
        # propensity is exactly one half: representer is +-1/pi = +-2
        assert set(np.round(values, 12)) <= {2.0, -2.0}
        assert bundle.true_nu2_s == pytest.approx(4.0, abs=1e-12)

    def test_cd2_target_hit_by_bisection(self):
        spec = SynthSpec(dgp="binary_ate_logit", n=10, dims=2, cy2=0.05, cd2=0.08, seed=7)
        _, bundle = generate(spec)
        assert bundle.true_cd2 == pytest.approx(0.08, abs=1e-6)
        assert bundle.true_cy2 == pytest.approx(0.05, abs=1e-9)

    def test_enumerated_moments_match_monte_carlo(self):
        spec = SynthSpec(dgp="binary_ate_logit", n=400_000, dims=2, cy2=0.05, cd2=0.05, seed=8)
        data, bundle = generate(spec)
        rows = data.wmatrix
        g_s = bundle.g_short.evaluate(rows)
        a_s = bundle.alpha_short.evaluate(rows)
        ate_scores = bundle.g_short.evaluate(_with_d(rows, 1.0)) - bundle.g_short.evaluate(
            _with_d(rows, 0.0)
        )
        assert np.mean(ate_scores) == pytest.approx(bundle.true_theta_s, abs=0.01)
        assert np.mean(a_s**2) == pytest.approx(bundle.true_nu2_s, rel=0.02)
        assert np.mean((data.outcome - g_s) ** 2) == pytest.approx(
            bundle.true_sigma2_s, rel=0.02
        )

    def test_bias_identity_on_binary_design(self):
        spec = SynthSpec(dgp="binary_ate_logit", n=600_000, dims=2, cy2=0.1, cd2=0.1, seed=9)
        data, bundle = generate(spec)
        closed_form = bundle.true_theta_s - bundle.true_theta
        sampled = error_covariance_bias(bundle, data)
        assert sampled == pytest.approx(closed_form, abs=0.01 + 0.05 * abs(closed_form))

    def test_b_form_rejected(self):
        with pytest.raises(SynthError, match="cy2"):
            SynthSpec(dgp="binary_ate_logit", n=10, b_g=1.0, b_alpha=1.0)


class TestRationalize:
    def base_model(self, n=2000, seed=0):
        data, bundle = generate(
            SynthSpec(dgp="plm_gaussian", n=n, dims=2, cy2=0.0, cd2=0.0, seed=seed)
        )
        return ShortModel(
            data=data,
            g_short=bundle.g_short,
            alpha_short=bundle.alpha_short,
            theta_s=bundle.true_theta_s,
        )

    def test_identity_root_for_uncorrelated_unit_strengths(self):
        root = psd_sqrt(np.array([[1.0, 0.0], [0.0, 1.0]]))
        assert np.allclose(root, np.eye(2))

    def test_adversarial_construction_attains_the_bound(self):
        base = self.base_model(n=100_000)
        b_g, b_alpha = 0.5, 0.8
        data, bundle = rationalize_confounding(1.0, b_g, b_alpha, base, seed=3)
        realized = error_covariance_bias(bundle, data)
        assert abs(realized) / (b_g * b_alpha) == pytest.approx(1.0, abs=0.02)
        # realized correlation of the two gaps approaches one
        long_rows = bundle.long_rows(data)
        g_gap = bundle.g_long.evaluate(long_rows) - bundle.g_short.evaluate(data.wmatrix)
        a_gap = bundle.alpha_long.evaluate(long_rows) - bundle.alpha_short.evaluate(data.wmatrix)
        assert np.corrcoef(g_gap, a_gap)[0, 1] == pytest.approx(1.0, abs=1e-9)

    def test_zero_outcome_strength_means_zero_bias(self):
        base = self.base_model()
        _, bundle = rationalize_confounding(1.0, 0.0, 1.0, base, seed=1)
        assert bundle.true_theta == bundle.true_theta_s

    def test_uncorrelated_strengths_realize_zero_correlation(self):
        base = self.base_model(n=50_000)
        data, bundle = rationalize_confounding(0.0, 1.0, 1.0, base, seed=2)
        long_rows = bundle.long_rows(data)
        g_gap = bundle.g_long.evaluate(long_rows) - bundle.g_short.evaluate(data.wmatrix)
        a_gap = bundle.alpha_long.evaluate(long_rows) - bundle.alpha_short.evaluate(data.wmatrix)
        assert abs(np.corrcoef(g_gap, a_gap)[0, 1]) < 0.02
        assert np.mean(g_gap**2) == pytest.approx(1.0, rel=0.05)
        assert np.mean(a_gap**2) == pytest.approx(1.0, rel=0.05)

    def test_outcome_variance_budget_enforced(self):
        base = self.base_model()
        residual_sd = math.sqrt(
            float(np.mean((base.data.outcome - base.g_short.evaluate(base.data.wmatrix)) ** 2))
        )
        with pytest.raises(SynthError, match="budget"):
            rationalize_confounding(1.0, 10.0 * residual_sd, 1.0, base, seed=0)

    def test_short_regression_preserved(self):
        # the augmented outcome still has the same short regression
        base = self.base_model(n=200_000)
        data, bundle = rationalize_confounding(0.5, 0.7, 0.9, base, seed=4)
        resid = data.outcome - bundle.g_short.evaluate(data.wmatrix)
        for h in (data.treatment, data.covariates[:, 0], np.ones(data.n)):
            assert abs(np.mean(resid * h)) < 0.02 * float(np.std(resid)) * max(
                1.0, float(np.std(h))
            )


class TestNaturalConfounding:
    @pytest.mark.parametrize("k", [1, 2, 10])
    def test_expected_alignment_is_one_over_k(self, k, rng):
        draws = 4000
        rho2 = np.empty(draws)
        for i in range(draws):
            mu1 = rng.standard_normal(k)
            mu2 = rng.standard_normal(k)
            rho2[i] = (mu1 @ mu2) ** 2 / ((mu1 @ mu1) * (mu2 @ mu2))
        assert np.mean(rho2) == pytest.approx(1.0 / k, rel=0.05)


class TestCoverageExperiment:
    def test_oracle_mode_covers_theta_s(self):
        spec = SynthSpec(dgp="plm_gaussian", n=600, dims=2, cy2=0.05, cd2=0.05, seed=21)
        summary = coverage_experiment(
            spec, reps=200, a=0.05, config=CoverageConfig(oracle_nuisances=True)
        )
        # two-sided coverage target is 1 - 2a = 0.90; binomial 99% band
        assert summary.failures == 0
        band = 2.58 * math.sqrt(0.9 * 0.1 / 200)
        assert abs(summary.coverage_theta_s - 0.90) <= band + 1e-9

    def test_assumed_adversarial_when_truth_is_benign(self):
        spec = SynthSpec(dgp="plm_gaussian", n=500, dims=2, cy2=0.05, cd2=0.05, rho=0.0, seed=22)
        summary = coverage_experiment(
            spec,
            reps=120,
            a=0.05,
            config=CoverageConfig(oracle_nuisances=True, assumed_rho_abs=1.0),
        )
        assert summary.coverage_theta >= 0.99

    def test_tiny_sample_smoke(self):
        spec = SynthSpec(dgp="plm_gaussian", n=50, dims=2, cy2=0.05, cd2=0.05, seed=23)
        summary = coverage_experiment(spec, reps=5, a=0.05, config=CoverageConfig())
        assert summary.reps == 5
        assert summary.failures <= 5

    def test_parallel_workers_match_serial(self):
        spec = SynthSpec(dgp="plm_gaussian", n=300, dims=2, cy2=0.05, cd2=0.05, seed=24)
        serial = coverage_experiment(spec, reps=12, config=CoverageConfig(workers=1))
        parallel = coverage_experiment(spec, reps=12, config=CoverageConfig(workers=2))
        assert serial.coverage_lower == parallel.coverage_lower
        assert serial.rmse_theta_s == parallel.rmse_theta_s

    def test_rejects_empty(self):
        spec = SynthSpec(dgp="plm_gaussian", n=100, dims=2, cy2=0.05, cd2=0.05, seed=0)
        with pytest.raises(SynthError):
            coverage_experiment(spec, reps=0)


def _with_d(rows, value):
    out = rows.copy()
    out[:, 0] = value
    return out
