"""Continuous-time correlated random walk: fitting and conditional path draws.

Each axis carries a (position, velocity) state whose velocity follows an
Ornstein-Uhlenbeck process.  The two axes share (gamma_ou, sigma_ou, obs_sd)
and are otherwise independent, so filtering runs once over the covariance
and vectorised over the per-axis means.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np
from numba import njit
from scipy.optimize import minimize

log = logging.getLogger(__name__)

PRIOR_POSITION_VAR = 1e6
OBS_SD_EPS = 1e-6
MAX_ITER = 500
REL_TOL = 1e-8


class NumericError(ArithmeticError):
    """Non-finite value inside the state-space recursions."""


class ConvergenceError(RuntimeError):
    """Optimizer stopped without converging; ``best`` holds the best params."""

    def __init__(self, message, best=None, loglik=None):
        super().__init__(message)
        self.best = best
        self.loglik = loglik


@dataclass(frozen=True)
class Track:
    """Time-stamped planar telemetry fixes for one animal."""

    id: str
    times: np.ndarray
    positions: np.ndarray

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float).reshape(-1)
        pos = np.asarray(self.positions, dtype=float).reshape(-1, 2)
        if times.size < 2:
            raise ValueError(f"track {self.id!r} needs at least 2 fixes")
        if pos.shape[0] != times.size:
            raise ValueError(f"track {self.id!r}: {times.size} times, {pos.shape[0]} positions")
        if np.any(np.diff(times) <= 0):
            raise ValueError(f"track {self.id!r}: times must be strictly increasing")
        if not np.all(np.isfinite(pos)) or not np.all(np.isfinite(times)):
            raise ValueError(f"track {self.id!r}: non-finite fix")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "positions", pos)

    def __len__(self):
        return self.times.size


@dataclass(frozen=True)
class CtcrwParams:
    gamma_ou: float
    sigma_ou: float
    obs_sd: float = 0.0
    mu: tuple = (0.0, 0.0)

    def __post_init__(self):
        if not self.gamma_ou > 0:
            raise ValueError(f"gamma_ou must be positive, got {self.gamma_ou}")
        if not self.sigma_ou > 0:
            raise ValueError(f"sigma_ou must be positive, got {self.sigma_ou}")
        if not self.obs_sd >= 0:
            raise ValueError(f"obs_sd must be nonnegative, got {self.obs_sd}")
        object.__setattr__(self, "mu", tuple(float(m) for m in self.mu))

    def to_dict(self):
        return {
            "gamma_ou": self.gamma_ou,
            "sigma_ou": self.sigma_ou,
            "obs_sd": self.obs_sd,
            "mu": list(self.mu),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(d["gamma_ou"], d["sigma_ou"], d.get("obs_sd", 0.0), tuple(d.get("mu", (0.0, 0.0))))


@dataclass(frozen=True)
class FitResult:
    params: CtcrwParams
    loglik: float
    converged: bool
    n_iter: int


@dataclass(frozen=True)
class ImputedPath:
    """Fine-time path draw.  ``times`` may repeat (zero-length segments)."""

    times: np.ndarray
    positions: np.ndarray
    source_track: str = ""
    draw_seed: object = None

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float).reshape(-1)
        pos = np.asarray(self.positions, dtype=float).reshape(-1, 2)
        if pos.shape[0] != times.size or times.size < 1:
            raise ValueError("ImputedPath needs one position per time")
        if np.any(np.diff(times) < 0):
            raise ValueError("ImputedPath times must be non-decreasing")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "positions", pos)

    def position_at(self, t: float) -> np.ndarray:
        """Linearly interpolated position at ``t``."""
        if t < self.times[0] or t > self.times[-1]:
            raise ValueError(
                f"time {t} outside path span [{self.times[0]}, {self.times[-1]}]"
            )
        # right-continuous at repeated times
        k = np.searchsorted(self.times, t, side="right") - 1
        if k >= self.times.size - 1:
            return self.positions[-1].copy()
        t0, t1 = self.times[k], self.times[k + 1]
        if t1 == t0:
            return self.positions[k + 1].copy()
        f = (t - t0) / (t1 - t0)
        return (1 - f) * self.positions[k] + f * self.positions[k + 1]


# ---------------------------------------------------------------------------
# transition moments


@njit(cache=True)
def _qpp_factor(x):
    # x - 2(1 - e^-x) + (1 - e^-2x)/2, series near zero to avoid cancellation
    if x < 0.1:
        out = 0.0
        xn = x * x
        fact = 2.0
        sign = 1.0
        for n in range(3, 12):
            xn *= x
            fact *= n
            out += sign * (2.0 ** (n - 1) - 2.0) / fact * xn
            sign = -sign
        return out
    return x - 2.0 * (-np.expm1(-x)) + 0.5 * (-np.expm1(-2.0 * x))


@njit(cache=True)
def _moments(g, s, delta):
    """Return t01, t11, qpp, qpv, qvv, cpos, cvel (drift terms per unit mu)."""
    if delta <= 0.0:
        return 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0
    x = g * delta
    om1 = -np.expm1(-x)  # 1 - e^{-x}
    om2 = -np.expm1(-2.0 * x)
    t01 = om1 / g
    t11 = 1.0 - om1
    s2 = s * s
    qvv = s2 * om2 / (2.0 * g)
    qpv = s2 * om1 * om1 / (2.0 * g * g)
    qpp = s2 * _qpp_factor(x) / (g * g * g)
    cpos = delta - om1 / g
    cvel = om1
    return t01, t11, qpp, qpv, qvv, cpos, cvel


def ou_transition(params: CtcrwParams, delta: float):
    """State transition and process-noise covariance for one axis over ``delta``.

    Returns
    -------
    T : ndarray (2, 2)
        Maps (position, velocity) at t to its mean at t + delta (before drift).
    Q : ndarray (2, 2)
        Process-noise covariance.
    c : ndarray (2, 2)
        Affine drift term, one column per axis, from ``params.mu``.
    """
    if not delta > 0:
        raise ValueError(f"delta must be positive, got {delta}")
    t01, t11, qpp, qpv, qvv, cpos, cvel = _moments(params.gamma_ou, params.sigma_ou, float(delta))
    T = np.array([[1.0, t01], [0.0, t11]])
    Q = np.array([[qpp, qpv], [qpv, qvv]])
    mu = np.asarray(params.mu)
    c = np.vstack([cpos * mu, cvel * mu])
    return T, Q, c


# ---------------------------------------------------------------------------
# filter / smoother kernels
#
# obs has shape (n, S) with NaN where a series is unobserved; all series share
# one observation pattern (has_obs) and one covariance path.


@njit(cache=True)
def _filter(times, obs, has_obs, g, s, mu, obs_var, m0, p0):
    n = times.size
    S = obs.shape[1]
    a = np.empty((n, 2, S))
    af = np.empty((n, 2, S))
    P = np.empty((n, 3))
    Pf = np.empty((n, 3))
    ll = np.zeros(S)
    for k in range(n):
        if k == 0:
            for j in range(S):
                a[0, 0, j] = m0[0, j]
                a[0, 1, j] = m0[1, j]
            P[0, 0] = p0[0]
            P[0, 1] = p0[1]
            P[0, 2] = p0[2]
        else:
            t01, t11, qpp, qpv, qvv, cpos, cvel = _moments(g, s, times[k] - times[k - 1])
            for j in range(S):
                a[k, 0, j] = af[k - 1, 0, j] + t01 * af[k - 1, 1, j] + cpos * mu[j]
                a[k, 1, j] = t11 * af[k - 1, 1, j] + cvel * mu[j]
            f00, f01, f11 = Pf[k - 1, 0], Pf[k - 1, 1], Pf[k - 1, 2]
            P[k, 0] = f00 + 2.0 * t01 * f01 + t01 * t01 * f11 + qpp
            P[k, 1] = t11 * (f01 + t01 * f11) + qpv
            P[k, 2] = t11 * t11 * f11 + qvv
        p00, p01, p11 = P[k, 0], P[k, 1], P[k, 2]
        if has_obs[k]:
            F = p00 + obs_var
            if not (F > 0.0):
                if F == 0.0:
                    F = 1e-300
                else:
                    return a, af, P, Pf, ll, k
            for j in range(S):
                v = obs[k, j] - a[k, 0, j]
                ll[j] += -0.5 * (np.log(2.0 * np.pi * F) + v * v / F)
                af[k, 0, j] = a[k, 0, j] + p00 / F * v
                af[k, 1, j] = a[k, 1, j] + p01 / F * v
            Pf[k, 0] = p00 * obs_var / F
            Pf[k, 1] = p01 * obs_var / F
            Pf[k, 2] = p11 - p01 * p01 / F
        else:
            for j in range(S):
                af[k, 0, j] = a[k, 0, j]
                af[k, 1, j] = a[k, 1, j]
            Pf[k, 0] = p00
            Pf[k, 1] = p01
            Pf[k, 2] = p11
    return a, af, P, Pf, ll, -1


@njit(cache=True)
def _smooth(times, g, s, a, af, P, Pf):
    n, _, S = a.shape
    ms = np.empty_like(af)
    Ps = np.empty_like(Pf)
    ms[n - 1] = af[n - 1]
    Ps[n - 1] = Pf[n - 1]
    for k in range(n - 2, -1, -1):
        delta = times[k + 1] - times[k]
        f00, f01, f11 = Pf[k, 0], Pf[k, 1], Pf[k, 2]
        if delta <= 0.0:
            j00, j01, j10, j11 = 1.0, 0.0, 0.0, 1.0
        else:
            t01, t11, qpp, qpv, qvv, cpos, cvel = _moments(g, s, delta)
            # C = Pf T'
            c00 = f00 + f01 * t01
            c01 = f01 * t11
            c10 = f01 + f11 * t01
            c11 = f11 * t11
            p00, p01, p11 = P[k + 1, 0], P[k + 1, 1], P[k + 1, 2]
            det = p00 * p11 - p01 * p01
            i00 = p11 / det
            i01 = -p01 / det
            i11 = p00 / det
            j00 = c00 * i00 + c01 * i01
            j01 = c00 * i01 + c01 * i11
            j10 = c10 * i00 + c11 * i01
            j11 = c10 * i01 + c11 * i11
        for j in range(S):
            d0 = ms[k + 1, 0, j] - a[k + 1, 0, j]
            d1 = ms[k + 1, 1, j] - a[k + 1, 1, j]
            ms[k, 0, j] = af[k, 0, j] + j00 * d0 + j01 * d1
            ms[k, 1, j] = af[k, 1, j] + j10 * d0 + j11 * d1
        e00 = Ps[k + 1, 0] - P[k + 1, 0]
        e01 = Ps[k + 1, 1] - P[k + 1, 1]
        e11 = Ps[k + 1, 2] - P[k + 1, 2]
        # J E J'
        u00 = j00 * e00 + j01 * e01
        u01 = j00 * e01 + j01 * e11
        u10 = j10 * e00 + j11 * e01
        u11 = j10 * e01 + j11 * e11
        Ps[k, 0] = f00 + u00 * j00 + u01 * j01
        Ps[k, 1] = f01 + u00 * j10 + u01 * j11
        Ps[k, 2] = f11 + u10 * j10 + u11 * j11
    return ms, Ps


@njit(cache=True)
def _simulate(times, g, s, mu, m0, p0, z0, z):
    """Unconditional state path; z0 (2, S) and z (n, 2, S) standard normals."""
    n = times.size
    S = m0.shape[1]
    x = np.empty((n, 2, S))
    l00 = np.sqrt(p0[0])
    l10 = p0[1] / l00 if l00 > 0 else 0.0
    l11 = np.sqrt(max(p0[2] - l10 * l10, 0.0))
    for j in range(S):
        x[0, 0, j] = m0[0, j] + l00 * z0[0, j]
        x[0, 1, j] = m0[1, j] + l10 * z0[0, j] + l11 * z0[1, j]
    for k in range(1, n):
        t01, t11, qpp, qpv, qvv, cpos, cvel = _moments(g, s, times[k] - times[k - 1])
        q00 = np.sqrt(qpp)
        q10 = qpv / q00 if q00 > 0 else 0.0
        q11 = np.sqrt(max(qvv - q10 * q10, 0.0))
        for j in range(S):
            x[k, 0, j] = (x[k - 1, 0, j] + t01 * x[k - 1, 1, j] + cpos * mu[j]
                          + q00 * z[k, 0, j])
            x[k, 1, j] = (t11 * x[k - 1, 1, j] + cvel * mu[j]
                          + q10 * z[k, 0, j] + q11 * z[k, 1, j])
    return x


# ---------------------------------------------------------------------------


def _prior(track: Track, params: CtcrwParams, n_rep: int = 1):
    with np.errstate(over="ignore"):  # overflow surfaces as NumericError from the filter
        stat_var = np.float64(params.sigma_ou) ** 2 / (2.0 * params.gamma_ou)
    m0 = np.empty((2, 2 * n_rep))
    m0[0] = np.tile(track.positions[0], n_rep)
    m0[1] = np.tile(params.mu, n_rep)
    p0 = np.array([PRIOR_POSITION_VAR, 0.0, stat_var])
    return m0, p0


def _run_filter(times, obs, has_obs, params, m0, p0):
    S = obs.shape[1]
    mu = np.resize(np.asarray(params.mu, dtype=float), S)
    msg = (f"non-finite Kalman recursion (gamma_ou={params.gamma_ou:g}, "
           f"sigma_ou={params.sigma_ou:g}, obs_sd={params.obs_sd:g})")
    try:
        out = _filter(
            times, obs, has_obs, params.gamma_ou, params.sigma_ou, mu,
            params.obs_sd**2, m0, p0,
        )
    except ZeroDivisionError as exc:  # underflowed moments inside the compiled kernel
        raise NumericError(msg) from exc
    a, af, P, Pf, ll, bad = out
    if bad >= 0 or not (np.all(np.isfinite(ll)) and np.all(np.isfinite(Pf))):
        raise NumericError(msg)
    return a, af, P, Pf, ll


def kalman_loglik(track: Track, params: CtcrwParams) -> float:
    """Exact Gaussian log-likelihood of the fixes under the CTCRW model."""
    has_obs = np.ones(track.times.size, dtype=np.bool_)
    m0, p0 = _prior(track, params)
    *_, ll = _run_filter(track.times, track.positions, has_obs, params, m0, p0)
    return float(ll.sum())


def fine_times(track: Track, delta: float) -> np.ndarray:
    """Regular grid of step ``delta`` from the first fix, merged with the fix times."""
    if not delta > 0:
        raise ValueError(f"delta must be positive, got {delta}")
    t0, t1 = track.times[0], track.times[-1]
    n = int(np.floor((t1 - t0) / delta + 1e-9))
    grid = t0 + delta * np.arange(n + 1)
    merged = np.union1d(grid, track.times)
    # collapse grid points within rounding of a fix onto the fix
    keep = np.concatenate([[True], np.diff(merged) > 1e-9 * max(delta, 1.0)])
    merged = merged[keep]
    idx = np.searchsorted(merged, track.times)
    idx = np.clip(idx, 0, merged.size - 1)
    merged[idx] = track.times
    return merged


def smooth_path(track: Track, params: CtcrwParams, times: np.ndarray):
    """Kalman-smoothed position mean (n, 2) and variance (n,) at ``times``.

    ``times`` must contain every fix time.
    """
    times = np.asarray(times, dtype=float)
    idx = np.searchsorted(times, track.times)
    if np.any(idx >= times.size) or np.any(times[np.minimum(idx, times.size - 1)] != track.times):
        raise ValueError("smoothing times must include every fix time")
    obs = np.full((times.size, 2), np.nan)
    obs[idx] = track.positions
    has_obs = np.zeros(times.size, dtype=np.bool_)
    has_obs[idx] = True
    m0, p0 = _prior(track, params)
    a, af, P, Pf, _ = _run_filter(times, obs, has_obs, params, m0, p0)
    ms, Ps = _smooth(times, params.gamma_ou, params.sigma_ou, a, af, P, Pf)
    return ms[:, 0, :].copy(), Ps[:, 0].copy()


def draw_path(track: Track, params: CtcrwParams, delta: float, seed=None) -> ImputedPath:
    """One conditional draw of the fine-time path given the fixes.

    Simulate an unconditional state path with synthetic fixes, smooth the real
    and synthetic fixes together, and return
    ``smoothed(real) + unconditional - smoothed(synthetic)``.
    """
    rng = np.random.default_rng(seed)
    times = fine_times(track, delta)
    n = times.size
    idx = np.searchsorted(times, track.times)
    has_obs = np.zeros(n, dtype=np.bool_)
    has_obs[idx] = True

    m0, p0 = _prior(track, params, n_rep=2)
    mu = np.tile(np.asarray(params.mu, dtype=float), 2)
    z0 = rng.standard_normal((2, 2))
    z = rng.standard_normal((n, 2, 2))
    x_plus = _simulate(times, params.gamma_ou, params.sigma_ou, mu[:2], m0[:, :2], p0, z0, z)
    y_plus = x_plus[idx, 0, :] + params.obs_sd * rng.standard_normal((idx.size, 2))

    obs = np.full((n, 4), np.nan)
    obs[idx, :2] = track.positions
    obs[idx, 2:] = y_plus
    a, af, P, Pf, _ = _run_filter(times, obs, has_obs, params, m0, p0)
    ms, _ = _smooth(times, params.gamma_ou, params.sigma_ou, a, af, P, Pf)
    pos = ms[:, 0, :2] + x_plus[:, 0, :] - ms[:, 0, 2:]
    return ImputedPath(times, pos, source_track=track.id, draw_seed=seed)


def simulate_track(params: CtcrwParams, times, start=(0.0, 0.0), seed=None, track_id="sim") -> Track:
    """Simulate fixes from the CTCRW model (stationary initial velocity)."""
    rng = np.random.default_rng(seed)
    times = np.asarray(times, dtype=float)
    m0 = np.array([list(start), list(params.mu)], dtype=float)
    p0 = np.array([0.0, 0.0, params.sigma_ou**2 / (2 * params.gamma_ou)])
    x = _simulate(
        times, params.gamma_ou, params.sigma_ou, np.asarray(params.mu, dtype=float), m0, p0,
        rng.standard_normal((2, 2)), rng.standard_normal((times.size, 2, 2)),
    )
    pos = x[:, 0, :] + params.obs_sd * rng.standard_normal((times.size, 2))
    return Track(track_id, times, pos)


def _unpack(u, base: CtcrwParams, estimate_mu: bool) -> CtcrwParams:
    mu = tuple(u[3:5]) if estimate_mu else base.mu
    return CtcrwParams(
        float(np.exp(u[0])), float(np.exp(u[1])), max(float(np.exp(u[2])) - OBS_SD_EPS, 0.0), mu
    )


def fit_ctcrw(track: Track, init: CtcrwParams, estimate_mu: bool = False,
              estimate_obs_sd: bool = True) -> FitResult:
    """Maximise the Kalman log-likelihood over log-transformed parameters.

    Nelder-Mead on ``(log gamma_ou, log sigma_ou, log(obs_sd + 1e-6))`` and,
    when ``estimate_mu``, the two drift components.  Raises
    :class:`ConvergenceError` (carrying the best parameters) if the search
    hits the iteration cap.
    """
    if len(track) < 4:
        raise ValueError(f"track {track.id!r} needs at least 4 fixes to fit, has {len(track)}")
    u0 = [np.log(init.gamma_ou), np.log(init.sigma_ou), np.log(init.obs_sd + OBS_SD_EPS)]
    if estimate_mu:
        u0 += list(init.mu)
    u0 = np.array(u0)
    free = np.ones(u0.size, dtype=bool)
    if not estimate_obs_sd:
        free[2] = False

    def objective(v):
        u = u0.copy()
        u[free] = v
        try:
            ll = kalman_loglik(track, _unpack(u, init, estimate_mu))
        except (NumericError, ValueError, FloatingPointError):
            return np.inf
        return -ll if np.isfinite(ll) else np.inf

    f0 = objective(u0[free])
    if not np.isfinite(f0):
        raise NumericError("log-likelihood not finite at initial parameters")
    res = minimize(
        objective, u0[free], method="Nelder-Mead",
        options={
            "maxiter": MAX_ITER, "maxfev": 4 * MAX_ITER,
            "xatol": 1e-6, "fatol": REL_TOL * max(abs(f0), 1.0),
        },
    )
    u = u0.copy()
    u[free] = res.x
    params = _unpack(u, init, estimate_mu)
    if -res.fun < -f0:  # never worse than the start
        params, res_fun = init, f0
    else:
        res_fun = res.fun
    if not res.success:
        raise ConvergenceError(
            f"CTCRW fit for track {track.id!r} did not converge: {res.message}",
            best=params, loglik=-res_fun,
        )
    log.debug("fit_ctcrw %s: %s loglik=%.4f nit=%d", track.id, params, -res_fun, res.nit)
    return FitResult(params, float(-res_fun), True, int(res.nit))


def default_init(track: Track) -> CtcrwParams:
    """Moment-based starting values from step lengths and fix intervals."""
    dt = np.median(np.diff(track.times))
    speed = np.median(np.linalg.norm(np.diff(track.positions, axis=0), axis=1)) / dt
    speed = max(speed, 1e-6)
    gamma = 1.0 / dt
    sigma = speed * np.sqrt(2.0 * gamma)
    return CtcrwParams(gamma, sigma, obs_sd=1.0)


def with_obs_sd(params: CtcrwParams, obs_sd: float) -> CtcrwParams:
    return replace(params, obs_sd=obs_sd)
