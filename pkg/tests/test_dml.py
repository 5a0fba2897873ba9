import numpy as np
import pytest

from ovbounds import (
    Dataset,
    DmlError,
    DmlEstimate,
    FunctionalSpec,
    FunctionFromCallable,
    PenalizedLinearLearner,
    TreeEnsembleLearner,
    dml_solve,
    fit_nuisances,
    inject_nuisances,
    m_score,
    make_fold_plan,
    median_aggregate,
    orthogonality_check,
    plm_components,
    plugin_theta,
    score_covariance,
)
from tests.conftest import FixedFunctionLearner, build_cell_dataset


def fun(f):
    return FunctionFromCallable(f)


def randomized_binary_dataset(rng, n=400, theta=2.0):
    x = rng.uniform(size=n)
    pi = 0.3 + 0.4 * x
    d = (rng.uniform(size=n) < pi).astype(float)
    y = 1.0 + theta * d + x + 0.5 * rng.normal(size=n)
    data = Dataset(
        outcome=y, treatment=d, covariates=x[:, None], column_names=("x1",)
    )

    def g_true(rows):
        return 1.0 + theta * rows[:, 0] + rows[:, 1]

    def alpha_true(rows):
        p = 0.3 + 0.4 * rows[:, 1]
        return rows[:, 0] / p - (1.0 - rows[:, 0]) / (1.0 - p)

    return data, fun(g_true), fun(alpha_true)


class TestDmlSolve:
    def test_theta_with_exact_regression_on_noiseless_data(self, rng):
        n = 60
        x = rng.uniform(size=n)
        d = rng.integers(0, 2, n).astype(float)
        y = 3.0 * d + x  # noiseless
        data = Dataset(outcome=y, treatment=d, covariates=x[:, None], column_names=("x1",))
        spec = FunctionalSpec("binary_ate").for_dataset(data)
        plan = make_fold_plan(n, 3, seed=0)
        g = fun(lambda r: 3.0 * r[:, 0] + r[:, 1])
        alpha = fun(lambda r: 17.0 * (2.0 * r[:, 0] - 1.0))  # arbitrary representer
        nuis = inject_nuisances(g, alpha, plan)
        est = dml_solve("theta", spec, data, nuis)
        assert est.value == pytest.approx(plugin_theta(spec, g, data), abs=1e-12)
        assert est.value == pytest.approx(3.0, abs=1e-12)

    def test_sigma2_with_mean_regression_is_sample_variance(self, rng):
        n = 80
        data, _, alpha = randomized_binary_dataset(rng, n=n)
        spec = FunctionalSpec("binary_ate").for_dataset(data)
        plan = make_fold_plan(n, 4, seed=1)
        ybar = float(data.outcome.mean())
        nuis = inject_nuisances(fun(lambda r: np.full(r.shape[0], ybar)), alpha, plan)
        est = dml_solve("sigma2", spec, data, nuis)
        assert est.value == pytest.approx(float(np.var(data.outcome)), abs=1e-12)

    def test_nu2_hand_computation_constant_half_propensity(self):
        data = build_cell_dataset(
            [(0, 0.0, 1.0, 5), (1, 0.0, 2.0, 5), (0, 1.0, 0.0, 5), (1, 1.0, 1.0, 5)]
        )
        spec = FunctionalSpec("binary_ate").for_dataset(data)
        plan = make_fold_plan(data.n, 2, seed=0)
        alpha = fun(lambda r: 2.0 * (2.0 * r[:, 0] - 1.0))  # +-2 representer
        nuis = inject_nuisances(fun(lambda r: np.zeros(r.shape[0])), alpha, plan)
        est = dml_solve("nu2", spec, data, nuis)
        # per row: m = a(1,x) - a(0,x) = 4, so 2m - a^2 = 8 - 4 = 4
        assert est.value == pytest.approx(4.0, abs=1e-12)
        assert np.allclose(est.influence, 0.0)

    def test_negative_nu2_is_hard_error(self, rng):
        data, g, _ = randomized_binary_dataset(rng, n=100)
        spec = FunctionalSpec("binary_ate").for_dataset(data)
        plan = make_fold_plan(data.n, 2, seed=0)
        constant_alpha = fun(lambda r: np.full(r.shape[0], 5.0))
        nuis = inject_nuisances(g, constant_alpha, plan)
        with pytest.raises(DmlError, match="badly estimated"):
            dml_solve("nu2", spec, data, nuis)

    def test_influence_centering_and_stderr_identity(self, rng):
        data, g, alpha = randomized_binary_dataset(rng, n=300)
        spec = FunctionalSpec("binary_ate").for_dataset(data)
        plan = make_fold_plan(data.n, 5, seed=2)
        nuis = inject_nuisances(g, alpha, plan)
        for score in ("theta", "sigma2", "nu2"):
            est = dml_solve(score, spec, data, nuis)
            assert abs(float(np.mean(est.influence))) < 1e-10
            expected_se = np.sqrt(np.sum(est.influence**2)) / est.n
            assert est.std_error == pytest.approx(expected_se, abs=1e-12)

    def test_plm_kind_rejected(self, rng):
        data, g, alpha = randomized_binary_dataset(rng, n=50)
        spec = FunctionalSpec("plm_coefficient").for_dataset(data)
        plan = make_fold_plan(data.n, 2, seed=0)
        nuis = inject_nuisances(g, alpha, plan)
        with pytest.raises(Exception, match="plm_components"):
            dml_solve("theta", spec, data, nuis)

    def test_cross_fit_purity(self, rng):
        n = 200
        x = rng.normal(size=(n, 2))
        d = rng.integers(0, 2, n).astype(float)
        y = d + x[:, 0] + rng.normal(size=n)
        data = Dataset(outcome=y, treatment=d, covariates=x, column_names=("x1", "x2"))
        spec = FunctionalSpec("binary_ate").for_dataset(data)
        plan = make_fold_plan(n, 4, seed=3)
        nuis = fit_nuisances(
            data,
            spec,
            plan,
            TreeEnsembleLearner(num_trees=25, seed=0),
            riesz_method="plm",
            treatment_learner=TreeEnsembleLearner(num_trees=25, seed=1),
        )
        rows = data.wmatrix
        engine_values = nuis.g_oof(rows)
        for fold, _, test in plan.iter_folds():
            # engine used the not-trained-on-this-fold model ...
            assert np.allclose(engine_values[test], nuis.g_function(fold).evaluate(rows[test]))
            # ... and any in-fold model (trained on data containing these
            # rows) must give different values on generic data
            other = (fold + 1) % plan.num_folds
            assert not np.allclose(
                engine_values[test], nuis.g_function(other).evaluate(rows[test])
            )


class CellLookup:
    """Evaluable function from enumerated (d, x) cell values."""

    def __init__(self, table):
        self.table = table

    def evaluate(self, rows):
        rows = np.atleast_2d(rows)
        return np.array([self.table[(r[0], r[1])] for r in rows])


class TestOracleEquivalenceDiscreteToy:
    def test_theta_matches_enumerated_inner_product(self, rng):
        # within-cell outcome variation so the residual term is exercised
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
        n = data.n

        # enumerate the empirical joint: cell means and propensities
        g_table, alpha_table = {}, {}
        d, x, y = data.treatment, data.covariates[:, 0], data.outcome
        for xv in (0.0, 1.0):
            p1 = np.mean(d[x == xv])
            for dv in (0.0, 1.0):
                mask = (d == dv) & (x == xv)
                g_table[(dv, xv)] = float(np.mean(y[mask]))
                alpha_table[(dv, xv)] = (2 * dv - 1) / (p1 if dv == 1.0 else 1 - p1)

        g_s = CellLookup(g_table)
        alpha_s = CellLookup(alpha_table)
        enumerated = float(
            np.mean(g_s.evaluate(data.wmatrix) * alpha_s.evaluate(data.wmatrix))
        )

        plan = make_fold_plan(n, 4, seed=11)
        nuis = inject_nuisances(g_s, alpha_s, plan)
        est = dml_solve("theta", spec, data, nuis)
        assert est.value == pytest.approx(enumerated, abs=1e-9)


class TestOrthogonality:
    def setup_oracle(self, n, seed=5):
        rng = np.random.default_rng(seed)
        data, g, alpha = randomized_binary_dataset(rng, n=n)
        spec = FunctionalSpec("binary_ate").for_dataset(data)
        plan = make_fold_plan(n, 2, seed=0)
        return data, spec, inject_nuisances(g, alpha, plan), rng

    def direction(self, rng, scale=0.05):
        c = scale * rng.normal(size=3)
        return fun(lambda r: c[0] + c[1] * r[:, 0] + c[2] * r[:, 1])

    def test_theta_insensitive_to_regression_at_truth(self):
        data, spec, nuis, rng = self.setup_oracle(100_000)
        for _ in range(3):
            deriv = orthogonality_check(
                "theta", spec, data, nuis, self.direction(rng), eps=1e-3, which="g"
            )
            assert abs(deriv) <= 1e-3

    def test_theta_sensitive_at_wrong_representer(self):
        data, spec, nuis, rng = self.setup_oracle(100_000)
        wrong_alpha = fun(
            lambda r: nuis.riesz.fold_function(0).evaluate(r) + 1.0
        )
        shifted = inject_nuisances(nuis.g_function(0), wrong_alpha, nuis.plan)
        h = fun(lambda r: np.full(r.shape[0], 0.05))
        deriv = orthogonality_check("theta", spec, data, shifted, h, eps=1e-3, which="g")
        assert abs(deriv) > 10 * 1e-3  # contrast: clearly non-orthogonal

    def test_sigma2_insensitive_to_regression_at_truth(self):
        data, spec, nuis, rng = self.setup_oracle(100_000)
        deriv = orthogonality_check(
            "sigma2", spec, data, nuis, self.direction(rng), eps=1e-3, which="g"
        )
        assert abs(deriv) <= 1e-3

    def test_nu2_insensitive_to_representer_at_truth(self):
        data, spec, nuis, rng = self.setup_oracle(100_000)
        deriv = orthogonality_check(
            "nu2", spec, data, nuis, self.direction(rng), eps=1e-3, which="alpha"
        )
        assert abs(deriv) <= 1e-3


class TestScoreCovariance:
    def make_estimate(self, influence):
        influence = np.asarray(influence, dtype=float)
        influence = influence - influence.mean()
        return DmlEstimate(
            value=0.0,
            influence=influence,
            std_error=float(np.sqrt(np.mean(influence**2) / len(influence))),
            folds=2,
            meta="test",
        )

    def test_single_estimate_matches_se(self, rng):
        est = self.make_estimate(rng.normal(size=50))
        cov = score_covariance([est])
        assert cov.shape == (1, 1)
        assert cov[0, 0] == pytest.approx(est.n * est.std_error**2, rel=1e-12)

    def test_identical_influences_rank_one(self, rng):
        inf = rng.normal(size=40)
        cov = score_covariance([self.make_estimate(inf), self.make_estimate(inf)])
        corr = cov[0, 1] / np.sqrt(cov[0, 0] * cov[1, 1])
        assert corr == pytest.approx(1.0, abs=1e-12)

    def test_independent_scores_nearly_uncorrelated(self, rng):
        a = self.make_estimate(rng.normal(size=20_000))
        b = self.make_estimate(rng.normal(size=20_000))
        cov = score_covariance([a, b])
        corr = cov[0, 1] / np.sqrt(cov[0, 0] * cov[1, 1])
        assert abs(corr) < 0.05

    def test_mismatched_lengths_rejected(self, rng):
        with pytest.raises(ValueError, match="sample size"):
            score_covariance(
                [self.make_estimate(rng.normal(size=10)), self.make_estimate(rng.normal(size=12))]
            )


class TestPlmComponents:
    def linear_dataset(self, rng, n=500):
        x = rng.normal(size=(n, 3))
        d = x @ np.array([1.0, 0.5, -0.5]) + rng.normal(size=n)
        y = 2.0 * d + x @ np.array([1.0, 1.0, 0.0]) + rng.normal(size=n)
        return Dataset(outcome=y, treatment=d, covariates=x, column_names=("x1", "x2", "x3"))

    def test_matches_residual_ratio_with_oracle_nuisances(self, rng):
        data = self.linear_dataset(rng)
        plan = make_fold_plan(data.n, 5, seed=0)
        outcome_oracle = FixedFunctionLearner(
            lambda rows: rows @ np.array([3.0, 2.0, -1.0])  # E[Y|X] = beta + theta*gamma
        )
        treatment_oracle = FixedFunctionLearner(lambda rows: rows @ np.array([1.0, 0.5, -0.5]))
        parts = plm_components(data, plan, outcome_oracle, treatment_oracle)

        dres = data.treatment - data.covariates @ np.array([1.0, 0.5, -0.5])
        yres = data.outcome - data.covariates @ np.array([3.0, 2.0, -1.0])
        expected = float(np.mean(yres * dres) / np.mean(dres**2))
        assert parts["theta"].value == pytest.approx(expected, abs=1e-12)
        assert parts["theta"].value == pytest.approx(2.0, abs=0.15)

        eps = yres - expected * dres
        assert parts["sigma2"].value == pytest.approx(float(np.mean(eps**2)), abs=1e-12)
        assert parts["nu2"].value == pytest.approx(1.0 / float(np.mean(dres**2)), rel=1e-12)

    def test_influences_center_exactly(self, rng):
        data = self.linear_dataset(rng)
        plan = make_fold_plan(data.n, 5, seed=1)
        learner = PenalizedLinearLearner(l2_weight=1e-8)
        parts = plm_components(data, plan, learner, learner)
        for key in ("theta", "sigma2", "nu2"):
            assert abs(float(np.mean(parts[key].influence))) < 1e-10

    def test_degenerate_treatment_rejected(self, rng):
        x = rng.normal(size=(50, 1))
        data = Dataset(
            outcome=rng.normal(size=50),
            treatment=2.0 * x[:, 0],
            covariates=x,
            column_names=("x1",),
        )
        plan = make_fold_plan(50, 2, seed=0)
        learner = PenalizedLinearLearner()
        with pytest.raises(DmlError, match="residual variance"):
            plm_components(data, plan, learner, learner)


class TestMedianAggregate:
    def test_single_run_identity(self):
        value, se = median_aggregate([1.5], [0.2])
        assert value == 1.5 and se == pytest.approx(0.2)

    def test_spread_inflates_se(self):
        value, se = median_aggregate([1.0, 2.0, 3.0], [0.1, 0.1, 0.1])
        assert value == 2.0
        assert se > 0.1  # across-run spread is absorbed

    def test_coverage_of_theta_s_across_replications(self):
        # 500 replications of the partially linear pipeline at n=2000:
        # the two-sided 95% interval for theta_s must cover >= 92%
        from ovbounds import ComponentConfig, SynthSpec, estimate_components, generate

        reps = 500
        hits = 0
        learner = PenalizedLinearLearner(l2_weight=1e-8)
        cfg = ComponentConfig(
            regression_learner=learner,
            riesz_method="plm",
            treatment_learner=learner,
            outcome_learner=learner,
        )
        children = np.random.SeedSequence(987).spawn(reps)
        for child in children:
            seed = int(child.generate_state(1, dtype=np.uint64)[0])
            spec = SynthSpec(
                dgp="plm_gaussian", n=2000, dims=4, cy2=0.05, cd2=0.04, rho=1.0, seed=seed
            )
            data, bundle = generate(spec)
            plan = make_fold_plan(data.n, 5, seed=seed)
            cs = estimate_components(data, bundle.functional, plan, cfg)
            if abs(cs.theta.value - bundle.true_theta_s) <= 1.96 * cs.theta.std_error:
                hits += 1
        assert hits / reps >= 0.92
