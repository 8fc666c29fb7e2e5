"""Poisson GLM fitting for the latent CTDS design.

Maximum likelihood by Newton/IRLS with step halving, and the lasso by
coordinate descent on the penalised quadratic model inside an IRLS outer
loop.  All log-likelihoods are ``sum(w * (z * (offset + eta) - exp(offset + eta)))``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg
from scipy.optimize import minimize

from .design import DesignData

log = logging.getLogger(__name__)

ETA_MAX = 700.0
N_GAMMA = 50
GAMMA_RATIO = 1e-3
SOFT_TIE = 1e-12  # relative soft-threshold margin treated as rounding


class GlmError(RuntimeError):
    pass


class NumericGuardError(GlmError, ArithmeticError):
    pass


@dataclass
class GlmFit:
    beta_hat: np.ndarray
    covariance: np.ndarray
    loglik: float
    converged: bool
    n_iter: int
    columns: list = field(default_factory=list)

    @property
    def std_err(self) -> np.ndarray:
        return np.sqrt(np.diag(self.covariance))


@dataclass
class LassoFit:
    beta_hat: np.ndarray
    penalty: float
    active_set: np.ndarray
    loglik: float
    kkt_residual: float
    columns: list = field(default_factory=list)
    scale: np.ndarray | None = None
    n_iter: int = 0
    cv_curve: dict | None = None

    @property
    def penalized_zero(self) -> np.ndarray:
        return self.beta_hat == 0.0


def _linear(design: DesignData, beta) -> np.ndarray:
    lin = design.offset + design.X @ beta
    if lin.size and lin.max() > ETA_MAX:
        row = int(np.argmax(lin))
        raise NumericGuardError(
            f"linear predictor {lin[row]:.1f} exceeds {ETA_MAX} at row {row} (block {design.block[row]})"
        )
    return lin


def poisson_loglik(design: DesignData, beta) -> tuple[float, np.ndarray]:
    """Log-likelihood and its gradient with respect to ``beta``."""
    beta = np.asarray(beta, dtype=float)
    if beta.shape != (design.n_cols,):
        raise ValueError(f"beta has shape {beta.shape}, design has {design.n_cols} columns")
    lin = _linear(design, beta)
    mu = np.exp(lin)
    w = design.weights
    ll = float(np.sum(w * (design.z * lin - mu)))
    grad = design.X.T @ (w * (design.z - mu))
    return ll, grad


def ctmc_loglik(design: DesignData, beta) -> float:
    """Sum over transitions of log(rate to destination) - residence * total rate.

    Evaluated block by block from the rates directly rather than through the
    Poisson form; differs from :func:`poisson_loglik` by ``sum(z * offset)``.
    """
    beta = np.asarray(beta, dtype=float)
    eta = design.X @ beta
    rate = np.exp(eta)
    order = np.argsort(design.block, kind="stable")
    blk = design.block[order]
    starts = np.flatnonzero(np.r_[True, blk[1:] != blk[:-1]])
    total = np.add.reduceat(rate[order], starts)
    tau = design.tau[order][starts]
    w = design.weights[order][starts]
    chosen = np.add.reduceat((design.z * eta)[order], starts)
    return float(np.sum(w * (chosen - tau * total)))


def fisher_information(design: DesignData, beta) -> np.ndarray:
    mu = np.exp(_linear(design, beta))
    Xw = design.X * (design.weights * mu)[:, None]
    return design.X.T @ Xw


def check_rank(design: DesignData, tol: float = 1e-10) -> None:
    """Raise :class:`GlmError` naming a column that is linearly dependent on the others."""
    if design.n_cols == 0:
        return
    A = design.X * np.sqrt(design.weights * design.tau)[:, None]
    _, R, piv = linalg.qr(A, mode="economic", pivoting=True)
    d = np.abs(np.diag(R))
    if d.size < design.n_cols:
        rank = d.size
    else:
        rank = int(np.sum(d > tol * max(d[0], 1e-300)))
    if rank < design.n_cols:
        col = design.columns[piv[rank]]
        raise GlmError(f"rank-deficient design: column {col!r} is linearly dependent on the others")


def fit_irls(design: DesignData, beta0=None, max_iter: int = 100, tol: float = 1e-10) -> GlmFit:
    """Poisson MLE by Newton (Fisher scoring) with step halving.

    Iterates until the relative log-likelihood change is below ``tol`` and
    the Newton step has stalled.  The covariance is the inverse Fisher
    information at the estimate.
    """
    if not np.any(design.z > 0):
        raise GlmError("design has no realized transitions (no z = 1 rows)")
    check_rank(design)
    p = design.n_cols
    beta = np.zeros(p) if beta0 is None else np.asarray(beta0, dtype=float).copy()
    ll, grad = poisson_loglik(design, beta)
    trace = [ll]
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        H = fisher_information(design, beta)
        try:
            step = linalg.solve(H, grad, assume_a="pos")
        except (linalg.LinAlgError, ValueError):
            step = linalg.lstsq(H, grad)[0]
        t = 1.0
        while True:
            cand = beta + t * step
            try:
                ll_new, grad_new = poisson_loglik(design, cand)
            except NumericGuardError:
                ll_new = -np.inf
            if ll_new >= ll - 1e-12 * abs(ll) or t < 1e-10:
                break
            t *= 0.5
        if not np.isfinite(ll_new):
            raise GlmError(f"IRLS diverged; log-likelihood trace {trace[-5:]}")
        rel = abs(ll_new - ll) / max(abs(ll), 1.0)
        beta, ll, grad = cand, ll_new, grad_new
        trace.append(ll)
        if rel < tol and np.max(np.abs(t * step)) < 1e-8:
            converged = True
            break
    if not converged:
        raise GlmError(f"IRLS did not converge in {max_iter} iterations; trace {trace[-5:]}")
    H = fisher_information(design, beta)
    cov = linalg.inv(H)
    cov = 0.5 * (cov + cov.T)
    return GlmFit(beta, cov, ll, converged, it, list(design.columns))


def fit_generic(design: DesignData, beta0=None) -> np.ndarray:
    """MLE by BFGS on the log-likelihood; an independent check on :func:`fit_irls`."""

    def f(b):
        ll, g = poisson_loglik(design, b)
        return -ll, -g

    x0 = np.zeros(design.n_cols) if beta0 is None else beta0
    res = minimize(f, x0, jac=True, method="BFGS", options={"gtol": 1e-10, "maxiter": 10000})
    return res.x


# ---------------------------------------------------------------------------
# lasso


def lasso_scale(design: DesignData) -> np.ndarray:
    """Residence-weighted column standard deviations (1 for constant columns)."""
    w = design.weights * design.tau
    wsum = w.sum()
    mean = (w @ design.X) / wsum
    var = (w @ (design.X - mean) ** 2) / wsum
    scale = np.sqrt(var)
    scale[~(scale > 1e-12)] = 1.0
    return scale


def _penalized_objective(ll, b, gamma, pen):
    return ll - gamma * np.sum(np.abs(b[pen]))


def _cd_quadratic(H, c, b, gamma, pen, tol=1e-13, max_sweeps=10000):
    """Coordinate descent for max c'b - b'Hb/2 - gamma*|b_pen|_1."""
    b = b.copy()
    diag = np.diag(H).copy()
    p = b.size
    for _ in range(max_sweeps):
        delta = 0.0
        for j in range(p):
            if diag[j] <= 0:
                continue
            r = c[j] - H[j] @ b + diag[j] * b[j]
            if pen[j]:
                excess = abs(r) - gamma
                # an excess at rounding level (gamma at gamma_max) is a tie, not a signal
                if excess <= SOFT_TIE * max(abs(r), gamma):
                    excess = 0.0
                new = np.sign(r) * excess / diag[j]
            else:
                new = r / diag[j]
            d = abs(new - b[j])
            if d > delta:
                delta = d
            b[j] = new
        if delta < tol * max(1.0, np.max(np.abs(b))):
            break
    return b


def _std_design(design: DesignData, scale: np.ndarray) -> DesignData:
    std = design.subset_columns(np.arange(design.n_cols))
    std.X = design.X / scale
    return std


def kkt_residual(design_std: DesignData, b, gamma, pen) -> float:
    """Largest KKT violation of the standardized lasso problem."""
    _, g = poisson_loglik(design_std, b)
    res = np.zeros_like(b)
    active = b != 0
    zero_pen = pen & ~active
    res[zero_pen] = np.maximum(np.abs(g[zero_pen]) - gamma, 0.0)
    act_pen = pen & active
    res[act_pen] = np.abs(g[act_pen] - gamma * np.sign(b[act_pen]))
    res[~pen] = np.abs(g[~pen])
    return float(res.max()) if res.size else 0.0


def _fit_lasso_std(dstd: DesignData, gamma, pen, b0, max_iter=200, tol=1e-10):
    b = b0.copy()
    ll, g = poisson_loglik(dstd, b)
    obj = _penalized_objective(ll, b, gamma, pen)
    for it in range(1, max_iter + 1):
        H = fisher_information(dstd, b)
        c = g + H @ b
        b_new = _cd_quadratic(H, c, b, gamma, pen)
        step = b_new - b
        t = 1.0
        while True:
            cand = b + t * step
            if t < 1.0:
                cand[pen & (np.abs(cand) < 1e-14)] = 0.0
            try:
                ll_c, g_c = poisson_loglik(dstd, cand)
                obj_c = _penalized_objective(ll_c, cand, gamma, pen)
            except NumericGuardError:
                obj_c = -np.inf
            if obj_c >= obj - 1e-13 * max(abs(obj), 1.0) or t < 1e-8:
                break
            t *= 0.5
        if not np.isfinite(obj_c):
            raise GlmError("lasso IRLS diverged")
        moved = np.max(np.abs(cand - b)) if b.size else 0.0
        b, ll, g, obj = cand, ll_c, g_c, obj_c
        if moved < tol:
            return b, ll, it
    log.warning("lasso did not reach tolerance in %d iterations (gamma=%g)", max_iter, gamma)
    return b, ll, max_iter


def _null_start(dstd: DesignData, pen) -> np.ndarray:
    b = np.zeros(dstd.n_cols)
    if np.any(~pen):
        sub = dstd.subset_columns(~pen)
        b[~pen] = fit_irls(sub).beta_hat
    return b


def _flat_penalized(design: DesignData) -> np.ndarray:
    """Penalized columns that are constant over the rows (zero weighted variance)."""
    w = design.weights * design.tau
    mean = (w @ design.X) / w.sum()
    var = (w @ (design.X - mean) ** 2) / w.sum()
    return ~design.unpenalized & ~(var > 1e-24 * np.maximum(mean**2, 1.0))


def gamma_max(design: DesignData) -> float:
    """Smallest penalty at which every penalized coefficient is zero."""
    pen = ~design.unpenalized
    if not pen.any():
        return 0.0
    scale = lasso_scale(design)
    dstd = _std_design(design, scale)
    b = _null_start(dstd, pen)
    _, g = poisson_loglik(dstd, b)
    return float(np.max(np.abs(g[pen])))


def fit_lasso(design: DesignData, gamma_lasso: float, beta0=None) -> LassoFit:
    """Lasso-penalised Poisson fit at a single penalty.

    The penalty applies to standardized coefficients of the penalized columns
    (everything except intercept columns); the result is on the original
    scale.  ``beta0`` (original scale) warm-starts the search.
    """
    if gamma_lasso < 0:
        raise ValueError("gamma_lasso must be nonnegative")
    if not np.any(design.z > 0):
        raise GlmError("design has no realized transitions (no z = 1 rows)")
    flat = _flat_penalized(design)
    if flat.any():
        # penalized columns with no variation carry no information; pin them at zero
        keep = np.flatnonzero(~flat)
        b0 = None if beta0 is None else np.asarray(beta0, dtype=float)[keep]
        sub = fit_lasso(design.subset_columns(keep), gamma_lasso, b0)
        beta = np.zeros(design.n_cols)
        beta[keep] = sub.beta_hat
        scale = np.ones(design.n_cols)
        scale[keep] = sub.scale
        return LassoFit(
            beta_hat=beta, penalty=sub.penalty, active_set=np.flatnonzero(beta != 0),
            loglik=sub.loglik, kkt_residual=sub.kkt_residual, columns=list(design.columns),
            scale=scale, n_iter=sub.n_iter,
        )
    check_rank(design)
    scale = lasso_scale(design)
    dstd = _std_design(design, scale)
    pen = ~design.unpenalized
    b0 = _null_start(dstd, pen) if beta0 is None else np.asarray(beta0, dtype=float) * scale
    b, ll, it = _fit_lasso_std(dstd, gamma_lasso, pen, b0)
    kkt = kkt_residual(dstd, b, gamma_lasso, pen)
    beta = b / scale
    return LassoFit(
        beta_hat=beta, penalty=float(gamma_lasso), active_set=np.flatnonzero(beta != 0),
        loglik=ll, kkt_residual=kkt, columns=list(design.columns), scale=scale, n_iter=it,
    )


def default_gamma_grid(design: DesignData, n: int = N_GAMMA, ratio: float = GAMMA_RATIO) -> np.ndarray:
    gmax = gamma_max(design)
    if gmax <= 0:
        return np.zeros(1)
    return gmax * np.logspace(0.0, np.log10(ratio), n)


def lasso_path(design: DesignData, gammas) -> tuple[list[LassoFit], list[int]]:
    """Warm-started fits over a decreasing penalty grid.

    Also returns the grid positions where the active set shrank as the
    penalty decreased (a soft diagnostic; coordinate descent does not
    guarantee monotone paths).
    """
    gammas = np.sort(np.asarray(gammas, dtype=float))[::-1]
    fits, beta = [], None
    for g in gammas:
        fit = fit_lasso(design, g, beta0=beta)
        beta = fit.beta_hat
        fits.append(fit)
    sizes = [np.sum(f.beta_hat[~design.unpenalized] != 0) for f in fits]
    violations = [i for i in range(1, len(sizes)) if sizes[i] < sizes[i - 1]]
    if violations:
        log.info("lasso path: active set shrank at grid points %s", violations)
    return fits, violations


def poisson_deviance(design: DesignData, beta) -> float:
    lin = design.offset + design.X @ beta
    mu = np.exp(np.minimum(lin, ETA_MAX))
    return float(2.0 * np.sum(design.weights * (mu - design.z - design.z * lin)))


def make_folds(design: DesignData, n_folds: int, rng) -> np.ndarray:
    """Fold label per row; whole transition blocks stay together."""
    blocks = np.unique(design.block)
    if blocks.size < n_folds:
        raise GlmError(f"{blocks.size} transitions cannot fill {n_folds} folds")
    perm = rng.permutation(blocks)
    label = np.empty(blocks.size, dtype=np.int64)
    label[np.argsort(perm)] = np.arange(blocks.size) % n_folds
    return label[np.searchsorted(blocks, design.block)]


def cv_lasso(design: DesignData, n_folds: int = 10, gamma_grid=None, seed=None,
             rule: str = "1se") -> LassoFit:
    """Choose the penalty by K-fold cross-validated Poisson deviance.

    Folds are whole transition blocks.  Training penalties are scaled by the
    training share of transitions so each grid value means the same per
    observation on every fold.  ``rule="min"`` selects the penalty with the
    smallest mean held-out deviance per transition; ``rule="1se"`` the
    largest penalty within one standard error of that minimum.  The chosen
    penalty is refit on all data.
    """
    if n_folds < 2:
        raise ValueError("n_folds must be >= 2")
    if rule not in ("min", "1se"):
        raise ValueError(f"unknown selection rule {rule!r}")
    rng = np.random.default_rng(seed)
    gammas = default_gamma_grid(design) if gamma_grid is None else np.sort(np.asarray(gamma_grid, float))[::-1]

    for attempt in range(2):
        folds = make_folds(design, n_folds, rng)
        ok = all(np.any(design.z[folds == k] > 0) and np.any(design.z[folds != k] > 0) for k in range(n_folds))
        if ok:
            break
        if attempt == 1:
            raise GlmError("a cross-validation fold has no realized transitions")

    trans_w = design.weights * design.z
    total = trans_w.sum()
    dev = np.empty((n_folds, gammas.size))
    for k in range(n_folds):
        train = design.subset_rows(folds != k)
        test = design.subset_rows(folds == k)
        frac = train.weights @ train.z / total
        beta = None
        for i, g in enumerate(gammas):
            fit = fit_lasso(train, g * frac, beta0=beta)
            beta = fit.beta_hat
            dev[k, i] = poisson_deviance(test, beta) / (test.weights @ test.z)
    mean = dev.mean(axis=0)
    sd = dev.std(axis=0, ddof=1) / np.sqrt(n_folds)
    i_min = int(np.argmin(mean))
    best = i_min
    if rule == "1se":
        best = int(np.flatnonzero(mean <= mean[i_min] + sd[i_min])[0])
    beta = None
    for g in gammas[: best + 1]:
        fit = fit_lasso(design, g, beta0=beta)
        beta = fit.beta_hat
    fit.cv_curve = {
        "gamma": gammas, "mean_deviance": mean, "sd": sd,
        "best_index": best, "min_index": i_min, "rule": rule,
    }
    return fit
