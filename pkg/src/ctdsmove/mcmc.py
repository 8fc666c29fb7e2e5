"""MCMC for CTDS coefficients under Gaussian or Bayesian-lasso priors."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg
from scipy.stats import norm

from .design import DesignData
from .glm import GlmError, NumericGuardError, fisher_information, fit_irls, poisson_loglik
from .pipeline import ModelConfig, impute_designs, seeds

log = logging.getLogger(__name__)

TARGET_ACCEPT = 0.234


class SamplerError(RuntimeError):
    pass


@dataclass(frozen=True)
class GaussianPrior:
    """beta ~ N(0, cov); ``cov`` may be a scalar variance applied to every coefficient."""

    cov: object = 100.0

    def matrix(self, p: int) -> np.ndarray:
        c = np.asarray(self.cov, dtype=float)
        if c.ndim == 0:
            return float(c) * np.eye(p)
        if c.ndim == 1:
            return np.diag(c)
        return c


@dataclass(frozen=True)
class LaplacePrior:
    """Bayesian lasso: alpha_k | s_k^2 ~ N(0, s_k^2), s_k^2 ~ Exp(rate gamma^2 / 2).

    Unpenalized (intercept) columns get N(0, ``unpenalized_var``).  When
    ``scale`` is given (the column scales of a lasso fit), coefficient ``k``
    gets rate ``gamma * scale[k]``, so the posterior mode is the lasso
    estimate on standardized columns at the same penalty.
    """

    gamma_lasso: float
    unpenalized_var: float = 100.0
    scale: tuple | None = None

    def __post_init__(self):
        if not self.gamma_lasso > 0:
            raise ValueError("Laplace prior needs gamma_lasso > 0")

    def rates(self, p: int) -> np.ndarray:
        if self.scale is None:
            return np.full(p, float(self.gamma_lasso))
        scale = np.asarray(self.scale, dtype=float)
        if scale.shape != (p,):
            raise ValueError(f"Laplace prior has {scale.size} scales for {p} coefficients")
        return self.gamma_lasso * scale


@dataclass
class McmcChain:
    draws: np.ndarray
    acceptance_rate: np.ndarray
    seed: object
    columns: list = field(default_factory=list)
    sigma2_draws: np.ndarray | None = None
    scale: float = 1.0
    path_index: np.ndarray | None = None

    @property
    def n_draws(self) -> int:
        return self.draws.shape[0]

    def summary(self, level: float = 0.95) -> list[dict]:
        lo, hi = np.quantile(self.draws, [(1 - level) / 2, (1 + level) / 2], axis=0)
        mean = self.draws.mean(axis=0)
        sd = self.draws.std(axis=0, ddof=1)
        se = mcse(self.draws)
        return [
            {
                "covariate": c, "mean": float(m), "sd": float(s), "mcse": float(e),
                "lower": float(a), "upper": float(b), "starred": bool(a > 0 or b < 0),
            }
            for c, m, s, e, a, b in zip(self.columns, mean, sd, se, lo, hi)
        ]


def mcse(draws: np.ndarray) -> np.ndarray:
    """Batch-means Monte Carlo standard error of the column means."""
    draws = np.atleast_2d(np.asarray(draws, dtype=float))
    if draws.shape[0] == 1:
        draws = draws.T
    n = draws.shape[0]
    n_batch = max(int(np.sqrt(n)), 2)
    size = n // n_batch
    means = draws[: n_batch * size].reshape(n_batch, size, -1).mean(axis=1)
    return means.std(axis=0, ddof=1) / np.sqrt(n_batch)


def inverse_gaussian(mean, shape, rng) -> np.ndarray:
    """Michael-Schucany-Haas inverse-Gaussian sampler (vectorized)."""
    mean = np.asarray(mean, dtype=float)
    shape = np.broadcast_to(np.asarray(shape, dtype=float), mean.shape)
    y = rng.standard_normal(mean.shape) ** 2
    a = mean * y / (2.0 * shape)
    # mean * (1 + a - sqrt(a^2 + 2a)), rewritten to avoid cancellation
    x = mean / (1.0 + a + np.sqrt(a * a + 2.0 * a))
    u = rng.random(mean.shape)
    return np.where(u <= mean / (mean + x), x, mean * mean / x)


def laplace_cdf(x, gamma_lasso):
    """CDF of Laplace(0, 1/gamma)."""
    x = np.asarray(x, dtype=float)
    return np.where(x < 0, 0.5 * np.exp(gamma_lasso * x), 1.0 - 0.5 * np.exp(-gamma_lasso * x))


def sample_beta(design: DesignData, prior, n_iter: int = 20000, n_burn: int | None = None,
                seed=None, likelihood: bool = True, init=None) -> McmcChain:
    """Random-walk Metropolis for beta, with Gibbs updates of the lasso scales.

    Proposals are Gaussian with covariance ``c^2 (H + P)^{-1}``, where ``H``
    is the Fisher information at the MLE (zero without likelihood) and ``P``
    the current prior precision; ``c`` adapts toward 0.234 acceptance during
    burn-in and is frozen afterwards.  Under :class:`LaplacePrior` each sweep
    also draws ``1/s_k^2`` from its inverse-Gaussian full conditional.
    """
    rng = np.random.default_rng(seed)
    p = design.n_cols
    n_burn = n_iter // 4 if n_burn is None else n_burn
    if not 0 <= n_burn < n_iter:
        raise ValueError("need 0 <= n_burn < n_iter")
    lasso = isinstance(prior, LaplacePrior)
    pen = ~design.unpenalized if lasso else np.zeros(p, dtype=bool)

    if lasso:
        rate = prior.rates(p)
        gamma2 = rate**2
        prior_prec = np.where(pen, 0.0, 1.0 / prior.unpenalized_var)
        sigma2 = rng.exponential(2.0 / gamma2)
        prior_prec[pen] = 1.0 / sigma2[pen]
    else:
        prior_cov = prior.matrix(p)
        try:
            prior_chol = linalg.cholesky(prior_cov, lower=True)
        except linalg.LinAlgError as err:
            raise SamplerError("Gaussian prior covariance is not positive definite") from err
        prior_P = linalg.cho_solve((prior_chol, True), np.eye(p))

    H = np.zeros((p, p))
    beta = np.zeros(p)
    if likelihood:
        try:
            mle = fit_irls(design)
            beta = mle.beta_hat.copy()
            H = fisher_information(design, beta)
        except GlmError as err:
            log.warning("MLE unavailable for proposal scaling (%s); using beta = 0", err)
            H = fisher_information(design, beta)
    elif lasso:
        beta[pen] = rng.standard_normal(pen.sum()) * np.sqrt(sigma2[pen])
    if init is not None:
        beta = np.asarray(init, dtype=float).copy()

    def log_prior(b):
        if lasso:
            return -0.5 * np.sum(prior_prec * b * b)
        return -0.5 * b @ prior_P @ b

    def log_lik(b):
        if not likelihood:
            return 0.0
        try:
            return poisson_loglik(design, b)[0]
        except NumericGuardError:
            return -np.inf

    ll = log_lik(beta)
    lp = ll + log_prior(beta)
    if not np.isfinite(lp):
        raise SamplerError("posterior is not finite at the initial value")

    def proposal_chol():
        A = H + (np.diag(prior_prec) if lasso else prior_P)
        try:
            return linalg.cholesky(linalg.inv(A), lower=True)
        except linalg.LinAlgError:
            return np.eye(p)

    L = proposal_chol()
    log_c = np.log(2.38 / np.sqrt(max(p, 1)))
    n_keep = n_iter - n_burn
    draws = np.empty((n_keep, p))
    s2_draws = np.empty((n_keep, p)) if lasso else None
    accepted = 0
    burn_acc = 0

    for it in range(n_iter):
        if lasso:
            L = proposal_chol()
        prop = beta + np.exp(log_c) * (L @ rng.standard_normal(p))
        ll_new = log_lik(prop)
        lp_new = ll_new + log_prior(prop) if np.isfinite(ll_new) else -np.inf
        acc = np.exp(min(0.0, lp_new - lp)) if np.isfinite(lp_new) else 0.0
        if rng.random() < acc:
            beta, ll, lp = prop, ll_new, lp_new
            if it >= n_burn:
                accepted += 1
            else:
                burn_acc += 1
        if it < n_burn:
            log_c += (acc - TARGET_ACCEPT) / (it + 1) ** 0.6

        if lasso:
            absb = np.maximum(np.abs(beta[pen]), 1e-300)
            inv_s2 = inverse_gaussian(rate[pen] / absb, gamma2[pen], rng)
            sigma2[pen] = 1.0 / inv_s2
            prior_prec[pen] = inv_s2
            lp = ll + log_prior(beta)

        if it >= n_burn:
            k = it - n_burn
            draws[k] = beta
            if lasso:
                s2_draws[k] = np.where(pen, sigma2, np.nan)

    rate = accepted / n_keep
    if rate == 0.0:
        raise SamplerError(
            f"no proposals accepted after burn-in (burn-in acceptance {burn_acc / max(n_burn, 1):.3f}, "
            f"scale {np.exp(log_c):.3g})"
        )
    return McmcChain(draws, np.array([rate]), seed, list(design.columns), s2_draws, float(np.exp(log_c)))


def composition_sample(track, config: ModelConfig, prior, K_paths: int, n_iter: int,
                       n_burn: int | None = None, seed=None, params=None) -> McmcChain:
    """Alternate path imputation and coefficient sampling.

    Draws ``K_paths`` imputations, runs :func:`sample_beta` on each, and
    concatenates the post-burn-in draws.  ``path_index`` records which
    imputation each draw came from.
    """
    path_seed, chain_seed = seeds(seed, 2)
    _, _, _, designs = impute_designs(track, config, K_paths, seed=path_seed, params=params)
    chains = [
        sample_beta(d, prior, n_iter, n_burn, seed=s)
        for d, s in zip(designs, seeds(chain_seed, K_paths))
    ]
    draws = np.vstack([c.draws for c in chains])
    s2 = None if chains[0].sigma2_draws is None else np.vstack([c.sigma2_draws for c in chains])
    idx = np.repeat(np.arange(K_paths), [c.n_draws for c in chains])
    rates = np.array([c.acceptance_rate[0] for c in chains])
    return McmcChain(draws, rates, seed, list(chains[0].columns), s2, path_index=idx)


def laplace_ks(chain: McmcChain, gamma_lasso: float, column: int = 0) -> float:
    """Kolmogorov-Smirnov distance between sampled draws and Laplace(0, 1/gamma)."""
    x = np.sort(chain.draws[:, column])
    n = x.size
    F = laplace_cdf(x, gamma_lasso)
    return float(max(np.max(np.arange(1, n + 1) / n - F), np.max(F - np.arange(n) / n)))


def equal_tailed(draws, level=0.95):
    return np.quantile(draws, [(1 - level) / 2, (1 + level) / 2], axis=0)


def gaussian_interval(mean, se, level=0.95):
    q = norm.ppf(0.5 + level / 2)
    return mean - q * se, mean + q * se
