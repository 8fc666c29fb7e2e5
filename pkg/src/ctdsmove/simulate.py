"""CTDS path simulation, telemetry thinning and coefficient-recovery studies."""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .ctcrw import CtcrwParams, Track
from .design import CovariateEvaluator, CovariateSpec, SplineConfig, build_design, spline_basis
from .discretize import DiscretePath
from .glm import cv_lasso
from .grid import ROOK_DIRECTIONS, RasterGrid
from .pipeline import ModelConfig, impute_designs, seeds
from .pooling import stack_designs

log = logging.getLogger(__name__)

BOUND_GRID_STEP = 60.0
BOUND_INFLATION = 1.01


class SimulationError(RuntimeError):
    pass


@dataclass
class SimConfig:
    """Generative setup for one simulated CTDS path.

    ``coefficients`` follow the column order of the design built from
    ``specs`` (spline-expanded columns included).
    """

    grid: RasterGrid
    specs: list
    coefficients: np.ndarray
    start_cell: int
    t0: float
    t1: float
    spline: SplineConfig | None = None
    thinning_interval: float = 14400.0
    seed: object = None
    force_thinning: bool = False

    def __post_init__(self):
        self.coefficients = np.asarray(self.coefficients, dtype=float)
        if not self.t1 > self.t0:
            raise SimulationError("t1 must exceed t0")
        self.grid.check_cell(self.start_cell)
        if not self.grid.valid[self.start_cell]:
            raise SimulationError(f"start cell {self.start_cell} is NODATA")


def _step_index(prev: np.ndarray) -> int:
    if not prev.any():
        return 4
    return int(np.flatnonzero(np.all(ROOK_DIRECTIONS == prev, axis=1))[0])


def simulate_ctds(config: SimConfig, evaluator: CovariateEvaluator | None = None) -> DiscretePath:
    """Event-driven CTDS simulation from ``config.t0`` to ``config.t1``.

    Static rates use exponential clocks directly.  Time-dependent rates
    (spline-expanded or conspecific covariates) use thinning against a
    per-state bound: the largest rate to each neighbor over one spline
    period on a one-minute grid, inflated by 1%, summed over neighbors.
    Conspecific terms enter the bound at their largest possible magnitude.
    """
    ev = evaluator or CovariateEvaluator(config.grid, config.specs, config.spline)
    beta = config.coefficients
    if beta.shape != (ev.n_cols,):
        raise SimulationError(f"{beta.size} coefficients for {ev.n_cols} design columns")
    rng = np.random.default_rng(config.seed)
    nbr = ev.nbr
    thinning = ev.time_dependent or config.force_thinning

    cell, t = int(config.start_cell), float(config.t0)
    prev = np.zeros(2)
    cells, clock = [cell], [t]
    rate_cache: dict = {}
    bound_cache: dict = {}
    n_exceed = 0

    def rates_at(cell, t, prev):
        vals = ev.values([cell], [t], prev[None, :])[0]
        lam = np.exp(vals @ beta)
        lam[nbr[cell] < 0] = 0.0
        return lam

    def bound_for(cell, prev):
        key = (cell, _step_index(prev))
        if key not in bound_cache:
            if config.spline is not None and any(s.time_varying for s in ev.specs):
                times = config.t0 + np.arange(0.0, config.spline.period, BOUND_GRID_STEP)
            else:
                times = np.array([config.t0])
            n = times.size
            vals = ev.values(np.full(n, cell), times, np.repeat(prev[None, :], n, axis=0),
                             skip=("directional_conspecific",))
            eta = vals @ beta  # (n, 4)
            basis = spline_basis(config.spline, times) if config.spline is not None else None
            for s in ev.specs:
                if s.kind != "directional_conspecific":
                    continue
                coef = beta[ev.slices[s.name]]
                mag = np.abs(basis @ coef) if s.time_varying else np.full(n, abs(coef[0]))
                eta = eta + mag[:, None]
            lam = np.exp(eta.max(axis=0)) * BOUND_INFLATION
            lam[nbr[cell] < 0] = 0.0
            bound_cache[key] = lam.sum()
        return bound_cache[key]

    while True:
        if not thinning:
            key = (cell, _step_index(prev))
            if key not in rate_cache:
                rate_cache[key] = rates_at(cell, t, prev)
            lam = rate_cache[key]
            total = lam.sum()
            if total <= 0:
                raise SimulationError(f"cell {cell} has no available neighbors (absorbing)")
            t_next = t + rng.exponential(1.0 / total)
            if t_next >= config.t1:
                break
        else:
            bound = bound_for(cell, prev)
            if bound <= 0:
                raise SimulationError(f"cell {cell} has no available neighbors (absorbing)")
            t_next = t
            while True:
                t_next += rng.exponential(1.0 / bound)
                if t_next >= config.t1:
                    break
                lam = rates_at(cell, t_next, prev)
                total = lam.sum()
                if total > bound:
                    n_exceed += 1
                if rng.random() * bound <= total:
                    break
            if t_next >= config.t1:
                break
        k = rng.choice(4, p=lam / total)
        new = int(nbr[cell, k])
        prev = ROOK_DIRECTIONS[k].copy()
        cell, t = new, t_next
        cells.append(cell)
        clock.append(t)
    if n_exceed:
        log.warning("thinning bound exceeded %d times", n_exceed)
    return DiscretePath(np.array(cells), np.array(clock), float(config.t1), censored=True)


def thin_to_track(dp: DiscretePath, grid: RasterGrid, interval: float, jitter_sd: float = 0.0,
                  seed=None, track_id: str = "sim") -> Track:
    """Record the occupied cell center every ``interval`` seconds from the start.

    When the span is shorter than one interval the end time is added so the
    track has two fixes.
    """
    if not interval > 0:
        raise ValueError("interval must be positive")
    rng = np.random.default_rng(seed)
    t0, t1 = dp.start_time, dp.end_time
    n = int(np.floor((t1 - t0) / interval + 1e-12))
    times = t0 + interval * np.arange(n + 1)
    if times.size == 1:
        times = np.array([t0, t1])
    idx = np.searchsorted(dp.clock_times, times, side="right") - 1
    pos = grid.centers()[dp.cells[idx]]
    if jitter_sd > 0:
        pos = pos + jitter_sd * rng.standard_normal(pos.shape)
    return Track(track_id, times, pos)


# ---------------------------------------------------------------------------
# recovery study


def synthetic_landscape(n_rows: int = 50, n_cols: int = 50, cell_size: float = 100.0,
                        n_features: int = 6, forest_fraction: float = 0.7, seed=None) -> RasterGrid:
    """Grid with a ``not_forest`` indicator, a ``pks`` feature mask and a fixed vector field.

    The vector field (``field_x``, ``field_y``) points from every cell toward
    a fixed ``den`` location, standing in for the direction to another animal.
    """
    rng = np.random.default_rng(seed)
    noise = ndimage.gaussian_filter(rng.standard_normal((n_rows, n_cols)), sigma=3.0, mode="wrap")
    not_forest = (noise > np.quantile(noise, forest_fraction)).astype(float)
    pks = np.zeros(n_rows * n_cols)
    pks[rng.choice(n_rows * n_cols, size=n_features, replace=False)] = 1.0
    grid = RasterGrid(n_rows, n_cols, cell_size, layers={"not_forest": not_forest.ravel(), "pks": pks})
    centers = grid.centers()
    den = np.array([rng.uniform(0.2, 0.8) * n_cols, rng.uniform(0.2, 0.8) * n_rows]) * cell_size
    d = den - centers
    norm = np.hypot(d[:, 0], d[:, 1])
    norm[norm < cell_size / 2] = np.inf
    return grid.with_layers(field_x=d[:, 0] / norm, field_y=d[:, 1] / norm)


@dataclass
class RecoveryProtocol:
    """Scaled version of the simulate -> thin -> impute -> lasso study."""

    truth: dict = field(default_factory=lambda: {"not_forest": 0.0, "pks": 0.3, "field": 0.0})
    intercept: float = float(np.log(1.0 / 2400.0))
    n_rows: int = 50
    n_cols: int = 50
    cell_size: float = 100.0
    span: float = 14 * 86400.0
    thinning_interval: float = 14400.0
    jitter_sd: float = 0.0
    K: int = 5
    delta: float | None = None
    n_folds: int = 10
    n_features: int = 6
    estimator: str = "imputed"  # or "oracle"
    cv_rule: str = "1se"
    ctcrw: CtcrwParams | None = None

    def specs(self) -> list:
        return [
            CovariateSpec("intercept", "intercept"),
            CovariateSpec("not_forest", "location", layer="not_forest"),
            CovariateSpec("pks", "directional_feature", layer="pks"),
            CovariateSpec("field", "directional_field", field=("field_x", "field_y")),
        ]


def _replicate(protocol: RecoveryProtocol, seed) -> np.ndarray:
    land_seed, sim_seed, track_seed, imp_seed, cv_seed = seeds(seed, 5)
    grid = synthetic_landscape(protocol.n_rows, protocol.n_cols, protocol.cell_size,
                               protocol.n_features, seed=land_seed)
    specs = protocol.specs()
    coefs = np.array([protocol.intercept] + [protocol.truth[s.name] for s in specs[1:]])
    start = grid.cell_index(protocol.n_rows // 2, protocol.n_cols // 2)
    ev = CovariateEvaluator(grid, specs)
    dp = simulate_ctds(SimConfig(grid, specs, coefs, start, 0.0, protocol.span, seed=sim_seed), ev)
    if protocol.estimator == "oracle":
        design = build_design(dp, grid, specs, evaluator=ev)
    else:
        track = thin_to_track(dp, grid, protocol.thinning_interval, protocol.jitter_sd, seed=track_seed)
        config = ModelConfig(grid, specs, ctcrw=protocol.ctcrw, delta=protocol.delta, _evaluator=ev)
        _, _, _, designs = impute_designs(track, config, protocol.K, seed=imp_seed, clip_to_grid=True)
        design = stack_designs(designs)
    fit = cv_lasso(design, protocol.n_folds, seed=cv_seed, rule=protocol.cv_rule)
    return fit.beta_hat[1:]


def _safe_replicate(args):
    protocol, r, child = args
    try:
        return r, _replicate(protocol, child), None
    except Exception as err:  # noqa: BLE001 - replicate failures are tallied, not fatal
        return r, None, repr(err)


def recovery_study(protocol: RecoveryProtocol, n_replicates: int, seed=None, progress=None,
                   workers: int = 1) -> dict:
    """Repeat the study and summarise sign/zero recovery per covariate.

    Replicate ``r`` always uses the ``r``-th child of ``seed``, so results do
    not depend on ``workers``.  Replicates that raise are skipped and counted
    in ``n_failed``.
    """
    names = [s.name for s in protocol.specs()[1:]]
    jobs = [(protocol, r, child) for r, child in enumerate(seeds(seed, n_replicates))]
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(_safe_replicate, jobs))
    else:
        results = []
        for job in jobs:
            results.append(_safe_replicate(job))
            if progress is not None:
                progress(job[1])
    estimates, failures = [], []
    for r, est, err in results:
        if err is None:
            estimates.append(est)
        else:
            log.warning("replicate %d failed: %s", r, err)
            failures.append((r, err))
    est = np.array(estimates).reshape(-1, len(names))
    rows = []
    for j, name in enumerate(names):
        col = est[:, j]
        rows.append({
            "covariate": name,
            "true": float(protocol.truth[name]),
            "prop_nonzero": float(np.mean(col != 0)) if col.size else float("nan"),
            "prop_zero": float(np.mean(col == 0)) if col.size else float("nan"),
            "prop_positive": float(np.mean(col > 0)) if col.size else float("nan"),
            "prop_negative": float(np.mean(col < 0)) if col.size else float("nan"),
            "min": float(col.min()) if col.size else float("nan"),
            "max": float(col.max()) if col.size else float("nan"),
        })
    return {"rows": rows, "estimates": est, "n_failed": len(failures), "failures": failures,
            "n_replicates": n_replicates, "estimator": protocol.estimator}
