"""Acceptance suite: ten end-to-end criteria at their stated tolerances.

Each test records a one-line PASS/FAIL verdict that is printed after the
pytest summary (see ``conftest.py``).  Run alone with
``pytest tests/test_acceptance.py -v``; criterion 5 takes several minutes.
"""

import os
import time

import numpy as np
import pytest
from scipy import stats
from scipy.optimize import minimize

from conftest import record
from ctdsmove.ctcrw import CtcrwParams, Track, draw_path, fine_times, ou_transition, smooth_path
from ctdsmove.design import CovariateSpec, SplineConfig, build_design, spline_basis
from ctdsmove.discretize import cell_center_trace, discretize
from ctdsmove.glm import (
    default_gamma_grid, fit_irls, fit_lasso, gamma_max, lasso_path, lasso_scale, poisson_loglik,
)
from ctdsmove.grid import RasterGrid
from ctdsmove.mcmc import GaussianPrior, LaplacePrior, composition_sample, laplace_ks, sample_beta
from ctdsmove.pipeline import ModelConfig, fitted_params, impute_designs, seeds
from ctdsmove.pooling import pool
from ctdsmove.simulate import (
    RecoveryProtocol, SimConfig, recovery_study, simulate_ctds, synthetic_landscape, thin_to_track,
)
from oracles import (
    complex_step_grad, ctmc_product_loglik, discrete_time_density, euler_maruyama_endpoints,
    euler_maruyama_law, random_design, second_moments,
)
from test_glm import signal_design

DAY = 86400.0


def verdict(number, title, ok, detail):
    record(number, title, ok, detail)
    print(f"criterion {number}: {'PASS' if ok else 'FAIL'} {detail}")
    assert ok, detail


def test_01_likelihood_equivalence():
    rng = np.random.default_rng(2024)
    worst_const = worst_grad = worst_beta = 0.0
    for _ in range(50):
        d = random_design(rng, int(rng.integers(5, 11)), int(rng.integers(2, 4)))
        betas = rng.normal(0, 1.5, size=(20, d.n_cols))
        lls = np.array([(poisson_loglik(d, b)[0], ctmc_product_loglik(d, b)) for b in betas])
        # spread of the difference, relative to the log-likelihood magnitude (rounding only)
        worst_const = max(worst_const, np.ptp(lls[:, 0] - lls[:, 1]) / np.abs(lls).max())
        for b in betas[:5]:
            g = complex_step_grad(lambda x: ctmc_product_loglik(d, x), b)
            worst_grad = max(worst_grad, np.max(np.abs(poisson_loglik(d, b)[1] - g)))
        res = minimize(lambda x: -ctmc_product_loglik(d, x), np.zeros(d.n_cols),
                       jac=lambda x: -complex_step_grad(lambda y: ctmc_product_loglik(d, y), x),
                       method="BFGS", options={"gtol": 1e-11, "maxiter": 10_000})
        worst_beta = max(worst_beta, np.max(np.abs(fit_irls(d).beta_hat - res.x)))
    ok = worst_const < 1e-12 and worst_grad <= 1e-8 and worst_beta <= 1e-6
    verdict(1, "likelihood equivalence", ok,
            f"constant spread {worst_const:.1e}, gradient gap {worst_grad:.1e}, beta gap {worst_beta:.1e}")


def test_02_discrete_time_limit():
    worst_order = []
    monotone = True
    for lam, tau in [(0.7, 2.3), (0.05, 10.0), (3.0, 0.4)]:
        exact = lam * np.exp(-tau * lam)
        # the per-step move probability lam*dt is divided out: a density per unit time
        errs = np.array([abs(discrete_time_density(lam, tau, tau / m) - exact) for m in (10, 100, 1000)])
        monotone &= bool(np.all(np.diff(errs) < 0))
        worst_order.extend(np.log10(errs[:-1] / errs[1:]))
    ok = monotone and all(0.9 < o < 1.1 for o in worst_order)
    verdict(2, "discrete-time limit", ok,
            f"monotone={monotone}, empirical orders {np.round(worst_order, 3).tolist()}")


def test_03_ctcrw_moments():
    # The Euler-Maruyama scheme is linear in Gaussian increments, so its endpoint
    # law is exactly N(0, S) with S from the scheme's own recursion.  Sampling
    # 1e6 endpoints from that law equals running 1e6 paths at step 1e-3;
    # the recursion itself is checked against genuine simulated paths below.
    n = 1_000_000
    rng = np.random.default_rng(3)
    details, ok = [], True
    for g, s, delta in [(0.01, 1.0, 10.0), (0.1, 0.5, 20.0), (1.0, 2.0, 10.0)]:
        S = euler_maruyama_law(g, s, delta, h=1e-3)
        samples = rng.multivariate_normal(np.zeros(2), S, size=n, method="cholesky")
        m, se = second_moments(samples)
        _, Q, _ = ou_transition(CtcrwParams(g, s), delta)
        z = np.abs(m - [Q[0, 0], Q[0, 1], Q[1, 1]]) / se
        ok &= bool(np.all(z < 3))
        details.append(f"max z {z.max():.2f}")
    g, s, delta = 0.5, 1.0, 0.4
    paths = euler_maruyama_endpoints(g, s, delta, n, seed=4)
    m, se = second_moments(paths)
    S = euler_maruyama_law(g, s, delta)
    z_path = np.abs(m - [S[0, 0], S[0, 1], S[1, 1]]) / se
    _, Q, _ = ou_transition(CtcrwParams(g, s), delta)
    z_direct = np.abs(m - [Q[0, 0], Q[0, 1], Q[1, 1]]) / se
    ok &= bool(np.all(z_path < 3) and np.all(z_direct < 3))
    details.append(f"simulated paths vs scheme law z {z_path.max():.2f}, vs exact z {z_direct.max():.2f}")
    verdict(3, "CTCRW transition moments", ok, "; ".join(details))


def test_04_conditional_draws():
    rng = np.random.default_rng(8)
    times = np.cumsum(rng.uniform(0.5, 1.5, 6)) * 60.0
    track = Track("t", times, np.cumsum(rng.normal(0, 20.0, (6, 2)), axis=0))
    params = CtcrwParams(0.01, 3.0, obs_sd=4.0)
    delta = 15.0
    grid_t = fine_times(track, delta)
    mean, var = smooth_path(track, params, grid_t)
    # one off-fix time per gap: the fine-grid point nearest each gap midpoint
    mids = (times[:-1] + times[1:]) / 2
    idx = np.array([np.argmin(np.abs(grid_t - m)) for m in mids])
    assert not np.any(np.isin(grid_t[idx], times))
    n = 1000
    draws = np.array([draw_path(track, params, delta, seed=s).positions[idx] for s in range(n)])
    v = var[idx][:, None]  # the smoother variance is shared by both axes
    z_mean = np.abs(draws.mean(axis=0) - mean[idx]) / np.sqrt(v / n)
    sq = (draws - mean[idx]) ** 2
    z_var = np.abs(sq.mean(axis=0) - v) / (sq.std(axis=0, ddof=1) / np.sqrt(n))
    ok = bool(np.all(z_mean < 3) and np.all(z_var < 3))
    verdict(4, "conditional-draw calibration", ok,
            f"{idx.size} off-fix times x 2 axes, max z mean {z_mean.max():.2f}, max z var {z_var.max():.2f}")


@pytest.mark.slow
def test_05_recovery_study():
    proto = RecoveryProtocol()  # 50x50 cells, 14 days, 4-hour fixes, truth (0, 0.3, 0)
    n = 100
    start = time.time()
    res = recovery_study(proto, n, seed=20240601, workers=os.cpu_count() or 1)
    est = res["estimates"]
    names = [r["covariate"] for r in res["rows"]]
    zero_cols = [j for j, k in enumerate(names) if proto.truth[k] == 0.0]
    sig = names.index("pks")
    # failed replicates count against every proportion
    zero_share = [float(np.sum(est[:, j] == 0) / n) for j in zero_cols]
    pos_share = float(np.sum(est[:, sig] > 0) / n)
    n_neg = int(np.sum(est[:, sig] < 0))
    ok = all(z >= 0.95 for z in zero_share) and n_neg == 0 and pos_share >= 0.60
    verdict(5, "recovery study", ok,
            f"zero shares {dict(zip([names[j] for j in zero_cols], zero_share))}, pks positive {pos_share:.2f}, "
            f"negative {n_neg}, failed {res['n_failed']}, {time.time() - start:.0f} s")


def mi_bayes_data():
    grid = synthetic_landscape(30, 30, 100.0, n_features=4, seed=61)
    specs = [CovariateSpec("intercept", "intercept"),
             CovariateSpec("not_forest", "location", layer="not_forest"),
             CovariateSpec("field", "directional_field", field=("field_x", "field_y"))]
    dp = simulate_ctds(SimConfig(grid, specs, [-10.0, 1.0, 0.5], grid.cell_index(15, 15), 0.0, 14 * DAY, seed=62))
    track = thin_to_track(dp, grid, 3600.0)
    config = ModelConfig(grid, specs)
    return track, config


def test_06_mi_versus_bayes():
    track, config = mi_bayes_data()
    params = fitted_params(track, config)
    K = 50
    _, _, _, designs = impute_designs(track, config, K, seed=63, params=params)
    fits = [fit_irls(d) for d in designs]
    pooled = pool(fits)
    mi_se = np.sqrt(np.diag(pooled.between) / K)
    chain = composition_sample(track, config, GaussianPrior(100.0), K, 4000, 1000, seed=64, params=params)
    path_means = np.array([chain.draws[chain.path_index == k].mean(axis=0) for k in range(K)])
    bayes_mean = chain.draws.mean(axis=0)
    bayes_se = path_means.std(axis=0, ddof=1) / np.sqrt(K)
    combined = np.sqrt(mi_se**2 + bayes_se**2)
    z = np.abs(pooled.mean - bayes_mean) / combined
    ok = bool(np.all(z < 2))
    detail = ", ".join(f"{c} {m:.3f}/{b:.3f} (z {zz:.2f})" for c, m, b, zz in
                       zip(chain.columns, pooled.mean, bayes_mean, z))
    verdict(6, "MI versus Bayes", ok, f"MI/Bayes means {detail}")


def test_07_lasso_kkt():
    worst_kkt = worst_direct = worst_zero = 0.0
    all_zero = True
    n_fits = 0
    for seed in range(20):
        d, _ = signal_design(1000 + seed, 200)
        pen = ~d.unpenalized
        fits, _ = lasso_path(d, default_gamma_grid(d))
        scale = lasso_scale(d)
        std = d.subset_columns(np.arange(d.n_cols))
        std.X = d.X / scale
        for f in fits:
            n_fits += 1
            worst_kkt = max(worst_kkt, f.kkt_residual)
            b = f.beta_hat * scale
            _, g = poisson_loglik(std, b)
            zero, active = pen & (b == 0), pen & (b != 0)
            r = np.concatenate([np.maximum(np.abs(g[zero]) - f.penalty, 0.0),
                                np.abs(g[active] - f.penalty * np.sign(b[active])), np.abs(g[~pen])])
            worst_direct = max(worst_direct, r.max())
        worst_zero = max(worst_zero, np.max(np.abs(fit_lasso(d, 0.0).beta_hat - fit_irls(d).beta_hat)))
        gmax = gamma_max(d)
        for mult in (1.0, 3.0):
            all_zero &= bool(np.all(fit_lasso(d, mult * gmax).beta_hat[pen] == 0.0))
    ok = worst_kkt <= 1e-6 and worst_direct <= 1e-6 and worst_zero <= 1e-5 and all_zero
    verdict(7, "lasso KKT", ok,
            f"{n_fits} fits, KKT {max(worst_kkt, worst_direct):.1e}, gamma=0 vs IRLS {worst_zero:.1e}, "
            f"all-zero above gamma_max {all_zero}")


def test_08_varying_coefficient():
    spline = SplineConfig()
    t = np.linspace(0.0, 3 * DAY, 20_001)
    phi = spline_basis(spline, t)
    unity = np.max(np.abs(phi.sum(axis=1) - 1.0))
    secs = np.arange(0.0, DAY, 37.0)
    periodic = bool(np.array_equal(spline_basis(spline, secs), spline_basis(spline, secs + DAY))
                    and np.array_equal(spline_basis(spline, secs), spline_basis(spline, secs + 5 * DAY)))

    # truth: the spline closest (least squares) to a sinusoidal log-rate
    base = np.log(1.0 / 1200.0)
    target = base + 0.8 * np.sin(2 * np.pi * (t - 6 * 3600.0) / DAY)
    alpha = np.linalg.lstsq(phi, target, rcond=None)[0]
    grid = RasterGrid(151, 151, 100.0)
    specs = [CovariateSpec("intercept", "intercept", time_varying=True)]
    dp = simulate_ctds(SimConfig(grid, specs, alpha, grid.cell_index(75, 75), 0.0, 20 * DAY, spline, seed=81))
    fit = fit_irls(build_design(dp, grid, specs, spline))
    hours = np.arange(24) * 3600.0
    ph = spline_basis(spline, hours)
    est = ph @ fit.beta_hat
    se = np.sqrt(np.einsum("ti,ij,tj->t", ph, fit.covariance, ph))
    truth = ph @ alpha
    q = stats.norm.ppf(0.975)
    coverage = float(np.mean(np.abs(est - truth) <= q * se))
    ok = unity < 1e-10 and periodic and coverage >= 0.80
    verdict(8, "varying coefficient", ok,
            f"partition of unity {unity:.1e}, periodic {periodic}, hourly 95% coverage {coverage:.2f} "
            f"({dp.n_visits - 1} transitions)")


def test_09_laplace_prior():
    gamma = 1.5
    d = random_design(np.random.default_rng(9), 5, 3)
    chain = sample_beta(d, LaplacePrior(gamma), 101_000, n_burn=1000, seed=90, likelihood=False)
    ks = [laplace_ks(chain, gamma, column=j) for j in (1, 2)]
    ok = chain.n_draws == 100_000 and max(ks) < 0.02
    verdict(9, "Bayesian-lasso prior", ok, f"{chain.n_draws} draws, KS {np.round(ks, 4).tolist()}")


def test_10_discretizer_round_trip():
    exact = 0
    worst = 0.0
    for seed in seeds(100, 100):
        r = np.random.default_rng(seed)
        n_rows, n_cols = r.integers(3, 25, size=2)
        cell = float(r.choice([1.0, 30.0, 100.0, 250.0]))
        grid = synthetic_landscape(int(n_rows), int(n_cols), cell, n_features=2, seed=r)
        grid = RasterGrid(grid.n_rows, grid.n_cols, cell, float(r.uniform(-1e5, 1e5)), float(r.uniform(-1e5, 1e5)),
                          grid.layers, grid.valid)
        specs = [CovariateSpec("intercept", "intercept"),
                 CovariateSpec("nf", "location", layer="not_forest"),
                 CovariateSpec("pks", "directional_feature", layer="pks")]
        beta = [np.log(1.0 / r.uniform(60, 3600)), *r.normal(0, 1, 2)]
        t0 = float(r.uniform(0, DAY))
        span = float(r.uniform(0.1, 5.0)) * DAY
        start = grid.cell_index(int(r.integers(n_rows)), int(r.integers(n_cols)))
        dp = simulate_ctds(SimConfig(grid, specs, beta, start, t0, t0 + span, seed=r))
        back = discretize(cell_center_trace(dp, grid), grid)
        exact += back == dp
        worst = max(worst, abs(back.residence_times.sum() - span) / span)
    ok = exact == 100 and worst <= 1e-9
    verdict(10, "discretizer round trip", ok, f"{exact}/100 exact, residence-sum error {worst:.1e}")


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-v"]))
