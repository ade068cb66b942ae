import math

import numpy as np
import pytest

from cohortfx.glm import (
    CvResult,
    DesignMatrix,
    RankDeficientError,
    SeparationError,
    cv_select_lambda,
    fit_lasso_path,
    fit_logistic_irls,
    fit_ols_robust,
    kkt_residual,
    predict_proba,
)

from conftest import random_linear_instance, random_logistic_instance


def logistic_loglik(X, y, intercept, coefs):
    eta = intercept + X.values @ coefs
    return float(np.sum(y * eta - np.logaddexp(0.0, eta)))


def finite_difference_gradient(X, y, intercept, coefs, h=1e-6):
    """Independent central-difference gradient of the log-likelihood."""
    theta = np.r_[intercept, coefs]

    def ll(t):
        return logistic_loglik(X, y, t[0], t[1:])

    grad = np.zeros_like(theta)
    for j in range(len(theta)):
        e = np.zeros_like(theta)
        e[j] = h
        grad[j] = (ll(theta + e) - ll(theta - e)) / (2 * h)
    return grad


class TestLogisticIrls:
    def test_intercept_only_closed_form(self):
        y = np.zeros(200)
        y[:50] = 1.0
        model = fit_logistic_irls(DesignMatrix(np.empty((200, 0)), []), y)
        assert model.intercept == pytest.approx(math.log(0.25 / 0.75), abs=1e-9)
        assert model.grad_norm <= 1e-8

    def test_perfect_separation_raises(self):
        X = DesignMatrix(np.linspace(-1, 1, 20).reshape(-1, 1), ["x"])
        y = (X.values[:, 0] > 0).astype(float)
        with pytest.raises(SeparationError):
            fit_logistic_irls(X, y)

    def test_ridge_fallback_fits_separated_data(self):
        X = DesignMatrix(np.linspace(-1, 1, 20).reshape(-1, 1), ["x"])
        y = (X.values[:, 0] > 0).astype(float)
        model = fit_logistic_irls(X, y, ridge=1e-6)
        assert np.isfinite(model.coefficients[0])
        assert model.coefficients[0] > 0

    @pytest.mark.parametrize("seed", range(5))
    def test_gradient_matches_finite_differences(self, seed):
        X, y = random_logistic_instance(seed)
        model = fit_logistic_irls(X, y)
        assert model.grad_norm <= 1e-8
        fd = finite_difference_gradient(X, y, model.intercept, model.coefficients)
        scale = max(1.0, float(np.abs(fd).max()))
        assert np.all(np.abs(fd) / scale <= 1e-5)

    def test_loglik_nondecreasing_per_iteration(self):
        X, y = random_logistic_instance(7)
        model = fit_logistic_irls(X, y)
        trace = model.ll_trace
        assert len(trace) >= 2
        assert all(b >= a - 1e-9 for a, b in zip(trace, trace[1:]))

    def test_bad_outcome_coding_rejected(self):
        X, _ = random_logistic_instance(0)
        with pytest.raises(ValueError):
            fit_logistic_irls(X, np.full(X.n, 2.0))


class TestPredictProba:
    def test_zero_model_gives_half(self):
        X, y = random_logistic_instance(1)
        model = fit_logistic_irls(X, y)
        model.coefficients[:] = 0.0
        model.intercept = 0.0
        assert np.allclose(predict_proba(model, X), 0.5)

    def test_large_intercept_saturates(self):
        X = DesignMatrix(np.zeros((4, 1)), ["x"])
        model = fit_logistic_irls(DesignMatrix(np.zeros((4, 0)), []), np.array([0.0, 1.0, 1.0, 0.0]))
        model.intercept = 20.0
        p = predict_proba(model, DesignMatrix(np.zeros((4, 0)), []))
        assert np.all(p > 0.999999)
        assert np.all(p < 1.0)

    def test_mean_probability_equals_treated_fraction(self):
        # score equation at the MLE: sum(y - p) == 0
        X, y = random_logistic_instance(3)
        model = fit_logistic_irls(X, y)
        p = predict_proba(model, X)
        assert abs(float(p.mean()) - float(y.mean())) <= 1e-10

    def test_monotone_in_linear_index(self):
        X, y = random_logistic_instance(4, p=1)
        model = fit_logistic_irls(X, y)
        eta = model.linear_index(X)
        order = np.argsort(eta)
        p = predict_proba(model, X)
        assert np.all(np.diff(p[order]) >= 0)

    def test_column_mismatch_rejected(self):
        X, y = random_logistic_instance(5)
        model = fit_logistic_irls(X, y)
        bad = DesignMatrix(X.values, [f"z{j}" for j in range(X.p)])
        with pytest.raises(ValueError):
            predict_proba(model, bad)


class TestOlsRobust:
    def test_exact_line(self):
        x = np.arange(10.0)
        model = fit_ols_robust(DesignMatrix(x.reshape(-1, 1), ["x"]), 2.0 * x)
        assert model.coefficients[0] == pytest.approx(2.0, abs=1e-12)
        assert model.standard_errors[1] == pytest.approx(0.0, abs=1e-10)

    def test_treatment_only_equals_mean_difference(self, rng):
        t = np.r_[np.ones(30), np.zeros(50)]
        y = rng.normal(size=80) + 3.0 * t
        model = fit_ols_robust(DesignMatrix(t.reshape(-1, 1), ["t"]), y)
        assert model.coefficients[0] == pytest.approx(float(y[t == 1].mean() - y[t == 0].mean()), abs=1e-12)

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_normal_equations_oracle(self, seed):
        X, y, _ = random_linear_instance(seed)
        model = fit_ols_robust(X, y)
        Z = np.column_stack([np.ones(X.n), X.values])
        oracle = np.linalg.solve(Z.T @ Z, Z.T @ y)
        ours = np.r_[model.intercept, model.coefficients]
        assert np.all(np.abs(ours - oracle) <= 1e-10 * np.maximum(np.abs(oracle), 1.0))

    def test_residuals_orthogonal_to_design(self):
        X, y, _ = random_linear_instance(11)
        model = fit_ols_robust(X, y)
        resid = y - (model.intercept + X.values @ model.coefficients)
        dots = X.values.T @ resid
        col_norms = np.linalg.norm(X.values, axis=0)
        assert np.all(np.abs(dots) <= 1e-8 * np.maximum(col_norms, 1.0))

    def test_rank_deficiency_names_columns(self):
        x = np.random.default_rng(0).normal(size=50)
        X = DesignMatrix(np.column_stack([x, 2.0 * x]), ["a", "a_doubled"])
        with pytest.raises(RankDeficientError) as err:
            fit_ols_robust(X, x)
        assert "a_doubled" in str(err.value) or "a" in str(err.value)

    def test_too_few_rows_rejected(self):
        X = DesignMatrix(np.eye(3), list("abc"))
        with pytest.raises(ValueError):
            fit_ols_robust(X, np.ones(3))


class TestLassoPath:
    def test_all_zero_at_lambda_max(self):
        X, y, _ = random_linear_instance(0)
        path = fit_lasso_path(X, y, family="linear")
        assert np.all(path.coefs[0] == 0.0)

    def test_lambda_zero_equals_ols(self):
        X, y, _ = random_linear_instance(1)
        path = fit_lasso_path(X, y, family="linear", lambdas=np.array([0.5, 0.1, 0.0]))
        slopes = path.coefs_original_scale()[-1]
        ols = fit_ols_robust(X, y)
        assert np.all(np.abs(slopes - ols.coefficients) <= 1e-8)
        assert path.intercepts[-1] == pytest.approx(ols.intercept, abs=1e-8)

    def test_single_standardized_predictor_closed_form(self, rng):
        x = rng.normal(size=400)
        x = (x - x.mean()) / x.std()
        y = 1.4 * x + rng.normal(size=400) * 0.6
        X = DesignMatrix(x.reshape(-1, 1), ["z"])
        grid = np.array([0.8, 0.3, 0.05, 0.01])
        path = fit_lasso_path(X, y, family="linear", lambdas=grid)
        rho = float(x @ (y - y.mean())) / len(y)
        for i, lam in enumerate(grid):
            expected = math.copysign(max(abs(rho) - lam, 0.0), rho)
            assert path.coefs[i, 0] == pytest.approx(expected, abs=1e-10)

    @pytest.mark.parametrize("family,seed", [("linear", 2), ("linear", 3), ("logistic", 2), ("logistic", 3)])
    def test_kkt_residuals_along_path(self, family, seed):
        if family == "linear":
            X, y, _ = random_linear_instance(seed, n=120, p=8)
        else:
            X, y = random_logistic_instance(seed, n=150, p=8)
        path = fit_lasso_path(X, y, family=family)
        assert kkt_residual(path, X, y).max() <= 1e-6

    def test_constant_column_dropped_with_warning(self, caplog):
        X, y, _ = random_linear_instance(4)
        values = np.column_stack([X.values, np.full(X.n, 3.0)])
        Xc = DesignMatrix(values, list(X.columns) + ["const"])
        with caplog.at_level("WARNING"):
            path = fit_lasso_path(Xc, y, family="linear")
        assert "const" in path.dropped_columns
        assert "const" not in path.columns

    def test_monotone_grid_required(self):
        X, y, _ = random_linear_instance(5)
        with pytest.raises(ValueError):
            fit_lasso_path(X, y, lambdas=np.array([0.1, 0.5]))

    def test_standardization_round_trip(self):
        # original-scale slopes + intercept must reproduce the fitted values
        # computed on the standardized scale
        X, y, _ = random_linear_instance(12, n=180, p=7)
        path = fit_lasso_path(X, y, family="linear")
        Xs = (X.values - path.x_center) / path.x_scale
        for i in (0, 40, 99):
            eta_std = (
                path.intercepts[i]
                + float((path.x_center / path.x_scale) @ path.coefs[i])
                + Xs @ path.coefs[i]
            )
            eta_orig = path.intercepts[i] + X.values @ path.coefs_original_scale()[i]
            assert np.max(np.abs(eta_std - eta_orig)) <= 1e-10


class TestCvSelectLambda:
    def test_deterministic_given_seed(self):
        X, y, _ = random_linear_instance(6, n=200, p=10, sparsity=3)
        a = cv_select_lambda(X, y, family="linear", seed=42)
        b = cv_select_lambda(X, y, family="linear", seed=42)
        assert a.lambda_selected == b.lambda_selected
        assert a.active_set == b.active_set
        c = cv_select_lambda(X, y, family="linear", seed=43)
        assert isinstance(c, CvResult)

    def test_min_rule_is_grid_minimum(self):
        X, y, _ = random_linear_instance(7, n=200, p=10, sparsity=3)
        res = cv_select_lambda(X, y, family="linear", rule="min", seed=0)
        assert res.cv_mean[res.lambda_index] == res.cv_mean.min()

    def test_1se_rule_takes_largest_lambda_within_band(self):
        X, y, _ = random_linear_instance(8, n=200, p=10, sparsity=3)
        mn = cv_select_lambda(X, y, family="linear", rule="min", seed=0)
        one_se = cv_select_lambda(X, y, family="linear", rule="1se", seed=0)
        assert one_se.lambda_selected >= mn.lambda_selected
        band = mn.cv_mean[mn.lambda_index] + mn.cv_se[mn.lambda_index]
        assert one_se.cv_mean[one_se.lambda_index] <= band

    def test_single_class_fold_impossible_raises(self):
        X, _ = random_logistic_instance(9, n=40, p=2)
        y = np.zeros(40)
        y[0] = 1.0  # the lone positive starves some training split
        with pytest.raises(ValueError):
            cv_select_lambda(X, y, family="logistic", folds=10, seed=0)

    def test_stratified_folds_handle_rare_class(self):
        X, _ = random_logistic_instance(10, n=120, p=3)
        y = np.zeros(120)
        y[:12] = 1.0
        res = cv_select_lambda(X, y, family="logistic", folds=5, seed=1)
        assert res.lambda_selected > 0

    @pytest.mark.slow
    def test_planted_support_recovered(self):
        # 5 true predictors of 50, n=500: the min-rule active set should
        # contain the full support in at least 90 of 100 seeds
        hits = 0
        for seed in range(100):
            r = np.random.default_rng(1000 + seed)
            X = r.normal(size=(500, 50))
            beta = np.zeros(50)
            beta[:5] = np.array([1.0, -1.0, 0.8, -0.8, 0.6])
            y = X @ beta + r.normal(size=500)
            Xd = DesignMatrix(X, [f"x{j}" for j in range(50)])
            res = cv_select_lambda(Xd, y, family="linear", seed=seed)
            if {f"x{j}" for j in range(5)} <= set(res.active_set):
                hits += 1
        assert hits >= 90, f"support recovered in only {hits}/100 seeds"
