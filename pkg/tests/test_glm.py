import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import minimize

from ctdsmove.design import DesignData
from ctdsmove.glm import (
    GlmError, NumericGuardError, cv_lasso, fit_generic, fit_irls, fit_lasso, gamma_max,
    lasso_path, lasso_scale, make_folds, poisson_deviance, poisson_loglik,
)
from oracles import (
    ctmc_product_loglik, discrete_time_density, finite_difference_grad, intercept_mle, random_design,
)


def one_block(tau=0.2, dest=0):
    z = np.zeros(4)
    z[dest] = 1.0
    return DesignData(
        X=np.ones((4, 1)), z=z, offset=np.full(4, np.log(tau)), block=np.zeros(4, dtype=np.int64),
        neighbor_dir=np.arange(4), columns=["intercept"], groups=["intercept"],
        unpenalized=np.array([True]),
    )


def duplicate(d: DesignData) -> DesignData:
    return DesignData(
        np.vstack([d.X, d.X]), np.tile(d.z, 2), np.tile(d.offset, 2),
        np.concatenate([d.block, d.block + d.block.max() + 1]), np.tile(d.neighbor_dir, 2),
        d.columns, d.groups, d.unpenalized, np.tile(d.weights, 2),
    )


def signal_design(seed, n_trans=400, effects=(0.8, 0.0, 0.0, -0.5, 0.0)):
    """Design with simulated responses: each block picks a destination by rate."""
    rng = np.random.default_rng(seed)
    d = random_design(rng, n_trans, len(effects) + 1)
    beta = np.array([-1.0, *effects])
    lam = np.exp(d.X @ beta)
    z = np.zeros_like(d.z)
    offset = np.empty_like(d.offset)
    for b in range(n_trans):
        rows = np.flatnonzero(d.block == b)
        p = lam[rows] / lam[rows].sum()
        z[rows[rng.choice(rows.size, p=p)]] = 1.0
        offset[rows] = np.log(rng.exponential(1.0 / lam[rows].sum()))
    d.z, d.offset = z, offset
    return d, beta


class TestLoglik:
    def test_closed_form_at_zero(self):
        ll, _ = poisson_loglik(one_block(0.2), np.zeros(1))
        assert ll == pytest.approx(np.log(0.2) - 0.8, rel=1e-14)

    @given(st.integers(0, 10_000), st.booleans())
    @settings(max_examples=50, deadline=None)
    def test_gradient_finite_differences(self, seed, weights):
        rng = np.random.default_rng(seed)
        d = random_design(rng, 10, 4, weights=weights)
        beta = rng.normal(0, 0.5, 4)
        _, g = poisson_loglik(d, beta)
        fd = finite_difference_grad(lambda b: poisson_loglik(d, b)[0], beta)
        assert np.allclose(g, fd, rtol=1e-6, atol=1e-6)

    def test_duplication_doubles(self):
        d = random_design(np.random.default_rng(1), 12, 3)
        beta = np.array([0.2, -0.4, 0.1])
        ll, g = poisson_loglik(d, beta)
        ll2, g2 = poisson_loglik(duplicate(d), beta)
        assert ll2 == pytest.approx(2 * ll, rel=1e-13)
        assert np.allclose(g2, 2 * g, rtol=1e-13)

    def test_eta_guard_names_row(self):
        d = random_design(np.random.default_rng(2), 5, 2)
        with pytest.raises(NumericGuardError, match="row"):
            poisson_loglik(d, np.array([800.0, 0.0]))

    def test_shape_check(self):
        with pytest.raises(ValueError, match="columns"):
            poisson_loglik(one_block(), np.zeros(2))

    def test_discrete_time_limit(self):
        lam, tau = 0.7, 2.3
        exact = lam * np.exp(-tau * lam)
        errs = [abs(discrete_time_density(lam, tau, tau / m) - exact) for m in (10, 100, 1000)]
        assert errs[0] > errs[1] > errs[2]
        # first-order convergence: error shrinks about tenfold per decade
        assert 5 < errs[0] / errs[1] < 20 and 5 < errs[1] / errs[2] < 20


class TestIrls:
    def test_intercept_closed_form(self):
        rng = np.random.default_rng(3)
        for weights in (False, True):
            d = random_design(rng, 2, 1, weights=weights)
            assert fit_irls(d).beta_hat[0] == pytest.approx(intercept_mle(d), abs=1e-10)

    def test_two_transitions_by_hand(self):
        a = one_block(0.2, 0)
        b = one_block(0.5, 2)
        d = DesignData(np.vstack([a.X, b.X]), np.r_[a.z, b.z], np.r_[a.offset, b.offset],
                       np.r_[a.block, b.block + 1], np.r_[a.neighbor_dir, b.neighbor_dir],
                       ["intercept"], ["intercept"], np.array([True]))
        assert fit_irls(d).beta_hat[0] == pytest.approx(np.log(2 / (4 * 0.2 + 4 * 0.5)), abs=1e-12)

    @given(st.integers(0, 10_000))
    @settings(max_examples=25, deadline=None)
    def test_matches_generic_optimizer_and_is_stationary(self, seed):
        d, _ = signal_design(seed, 150)
        fit = fit_irls(d)
        assert np.allclose(fit.beta_hat, fit_generic(d), atol=1e-6)
        _, g = poisson_loglik(d, fit.beta_hat)
        assert np.max(np.abs(g)) < 1e-6

    def test_equivalent_to_ctmc_product(self):
        d, _ = signal_design(4, 200)
        res = minimize(lambda b: -ctmc_product_loglik(d, b), np.zeros(d.n_cols), method="BFGS",
                       options={"gtol": 1e-9})
        assert np.allclose(fit_irls(d).beta_hat, res.x, atol=1e-5)

    def test_covariance_is_inverse_fisher(self):
        d, _ = signal_design(5, 200)
        fit = fit_irls(d)
        assert np.allclose(fit.covariance, fit.covariance.T)
        assert np.all(np.linalg.eigvalsh(fit.covariance) > 0)

    def test_rank_deficient_names_column(self):
        d = random_design(np.random.default_rng(6), 20, 3)
        d = DesignData(np.column_stack([d.X, 2 * d.X[:, 1]]), d.z, d.offset, d.block, d.neighbor_dir,
                       d.columns + ["copy"], d.groups + ["copy"], np.r_[d.unpenalized, False])
        with pytest.raises(GlmError, match="rank-deficient design: column '(x1|copy)'"):
            fit_irls(d)

    def test_no_transitions(self):
        d = one_block()
        d.z = np.zeros(4)
        with pytest.raises(GlmError, match="no realized"):
            fit_irls(d)

    def test_scale_equivariance(self):
        d, _ = signal_design(7, 200)
        c = 37.5
        scaled = DesignData(d.X.copy(), d.z, d.offset, d.block, d.neighbor_dir, d.columns, d.groups,
                            d.unpenalized)
        scaled.X[:, 2] *= c
        a, b = fit_irls(d), fit_irls(scaled)
        assert b.beta_hat[2] == pytest.approx(a.beta_hat[2] / c, rel=1e-8)
        assert np.allclose(d.X @ a.beta_hat, scaled.X @ b.beta_hat, atol=1e-8)


class TestLasso:
    def test_zero_penalty_is_mle(self):
        d, _ = signal_design(8, 300)
        assert np.allclose(fit_lasso(d, 0.0).beta_hat, fit_irls(d).beta_hat, atol=1e-5)

    def test_gamma_max(self):
        d, _ = signal_design(9, 300)
        gmax = gamma_max(d)
        fit = fit_lasso(d, gmax)
        assert np.all(fit.beta_hat[~d.unpenalized] == 0.0)
        assert fit.beta_hat[0] == pytest.approx(fit_irls(d.subset_columns([0])).beta_hat[0], abs=1e-8)
        below = fit_lasso(d, 0.9 * gmax)
        assert np.any(below.beta_hat[~d.unpenalized] != 0.0)

    @given(st.integers(0, 10_000), st.floats(0.05, 0.8))
    @settings(max_examples=15, deadline=None)
    def test_perturbation_probe(self, seed, frac):
        d, _ = signal_design(seed, 200)
        gamma = frac * gamma_max(d)
        fit = fit_lasso(d, gamma)
        pen = ~d.unpenalized

        def objective(b):
            return poisson_loglik(d, b)[0] - gamma * np.sum(np.abs(b[pen] * fit.scale[pen]))

        best = objective(fit.beta_hat)
        rng = np.random.default_rng(seed)
        for _ in range(100):
            probe = fit.beta_hat + rng.normal(0, 1e-3, d.n_cols) * rng.integers(0, 2, d.n_cols)
            assert objective(probe) <= best + 1e-9

    @given(st.integers(0, 10_000), st.floats(0.01, 1.2))
    @settings(max_examples=20, deadline=None)
    def test_kkt(self, seed, frac):
        d, _ = signal_design(seed, 200)
        fit = fit_lasso(d, frac * gamma_max(d))
        assert fit.kkt_residual < 1e-6
        # check directly on the standardized problem
        pen = ~d.unpenalized
        std = d.subset_columns(np.arange(d.n_cols))
        std.X = d.X / fit.scale
        b = fit.beta_hat * fit.scale
        _, g = poisson_loglik(std, b)
        gamma = fit.penalty
        zero = pen & (b == 0)
        active = pen & (b != 0)
        assert np.all(np.abs(g[zero]) <= gamma + 1e-6)
        assert np.allclose(g[active], gamma * np.sign(b[active]), atol=1e-6)
        assert np.all(np.abs(g[~pen]) < 1e-6)

    def test_exact_zeros(self):
        d, _ = signal_design(10, 300)
        fit = fit_lasso(d, 0.5 * gamma_max(d))
        assert np.all((fit.beta_hat == 0.0) | (np.abs(fit.beta_hat) > 1e-10))
        assert fit.active_set.tolist() == np.flatnonzero(fit.beta_hat != 0).tolist()

    def test_flat_column_pinned_at_zero(self):
        d, _ = signal_design(11, 200)
        d.X[:, 3] = 0.0
        fit = fit_lasso(d, 0.1 * gamma_max(d.subset_columns([0, 1, 2, 4, 5])))
        assert fit.beta_hat[3] == 0.0

    def test_scale_is_weighted_sd(self):
        d, _ = signal_design(12, 100)
        w = d.tau / d.tau.sum()
        mean = w @ d.X[:, 1]
        assert lasso_scale(d)[1] == pytest.approx(np.sqrt(w @ (d.X[:, 1] - mean) ** 2))
        assert lasso_scale(d)[0] == 1.0

    def test_negative_penalty(self):
        with pytest.raises(ValueError):
            fit_lasso(one_block(), -1.0)

    def test_path_diagnostic(self):
        d, _ = signal_design(13, 200)
        gmax = gamma_max(d)
        fits, violations = lasso_path(d, gmax * np.logspace(0, -3, 20))
        assert len(fits) == 20
        assert all(0 < v < 20 for v in violations)
        assert np.all(fits[0].beta_hat[1:] == 0.0)


class TestCrossValidation:
    def test_deterministic(self):
        d, _ = signal_design(14, 300)
        a = cv_lasso(d, 5, seed=3)
        b = cv_lasso(d, 5, seed=3)
        assert np.array_equal(a.beta_hat, b.beta_hat)
        assert np.array_equal(a.cv_curve["mean_deviance"], b.cv_curve["mean_deviance"])

    def test_rules(self):
        d, _ = signal_design(15, 300)
        fit_min = cv_lasso(d, 5, seed=1, rule="min")
        fit_1se = cv_lasso(d, 5, seed=1, rule="1se")
        c = fit_1se.cv_curve
        assert fit_min.cv_curve["best_index"] == int(np.argmin(c["mean_deviance"]))
        assert c["best_index"] <= c["min_index"]
        assert fit_1se.penalty >= fit_min.penalty
        assert c["mean_deviance"][c["best_index"]] <= c["mean_deviance"][c["min_index"]] + c["sd"][c["min_index"]]
        with pytest.raises(ValueError, match="rule"):
            cv_lasso(d, 5, rule="best")

    def test_recovers_signal_signs(self):
        d, beta = signal_design(16, 1500)
        fit = cv_lasso(d, 10, seed=0)
        assert fit.beta_hat[1] > 0 and fit.beta_hat[4] < 0

    def test_folds_keep_blocks_whole(self):
        d, _ = signal_design(17, 50)
        labels = make_folds(d, 10, np.random.default_rng(0))
        for b in range(50):
            assert np.unique(labels[d.block == b]).size == 1
        assert set(labels.tolist()) == set(range(10))

    def test_too_few_transitions(self):
        d, _ = signal_design(18, 5)
        with pytest.raises(GlmError, match="cannot fill"):
            cv_lasso(d, 10)

    def test_deviance_positive_at_mle(self):
        d, _ = signal_design(19, 50)
        assert poisson_deviance(d, fit_irls(d).beta_hat) > 0
