"""Track -> imputed paths -> discrete paths -> designs."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .ctcrw import (
    ConvergenceError, CtcrwParams, ImputedPath, Track, default_init, draw_path, fit_ctcrw,
)
from .design import CovariateEvaluator, SplineConfig, build_design
from .discretize import discretize
from .grid import RasterGrid

log = logging.getLogger(__name__)


@dataclass
class ModelConfig:
    """Everything needed to turn a track into designs.

    ``ctcrw`` fixes the imputation parameters; when None they are fitted
    to the track.  ``delta`` is the fine-grid step of imputed paths; None
    uses 1/20 of the median fix interval.  ``clip_to_grid`` clamps imputed
    positions that stray outside the raster onto its edge.
    """

    grid: RasterGrid
    specs: list
    spline: SplineConfig | None = None
    ctcrw: CtcrwParams | None = None
    ctcrw_init: CtcrwParams | None = None
    delta: float | None = None
    estimate_obs_sd: bool = True
    use_censored_tail: bool = False
    clip_to_grid: bool = False
    _evaluator: CovariateEvaluator | None = field(default=None, repr=False)

    @property
    def evaluator(self) -> CovariateEvaluator:
        if self._evaluator is None:
            self._evaluator = CovariateEvaluator(self.grid, self.specs, self.spline)
        return self._evaluator

    def resolved_delta(self, track: Track) -> float:
        if self.delta is not None:
            return float(self.delta)
        return float(np.median(np.diff(track.times)) / 20.0)


def fitted_params(track: Track, config: ModelConfig) -> CtcrwParams:
    if config.ctcrw is not None:
        return config.ctcrw
    init = config.ctcrw_init or default_init(track)
    try:
        return fit_ctcrw(track, init, estimate_obs_sd=config.estimate_obs_sd).params
    except ConvergenceError as err:
        log.warning("%s; using best parameters found", err)
        return err.best


def seeds(seed, n: int) -> list[np.random.SeedSequence]:
    """Independent child seeds; the k-th child is stable for a given master seed."""
    if not isinstance(seed, np.random.SeedSequence):
        seed = np.random.SeedSequence(seed)
    return seed.spawn(n)


def impute_designs(track: Track, config: ModelConfig, K: int, seed=None, params=None,
                   clip_to_grid: bool | None = None):
    """Draw K imputations and reduce each to a design.

    Returns ``(params, paths, discrete_paths, designs)``.
    """
    params = params or fitted_params(track, config)
    clip_to_grid = config.clip_to_grid if clip_to_grid is None else clip_to_grid
    delta = config.resolved_delta(track)
    paths, dps, designs = [], [], []
    for child in seeds(seed, K):
        path = draw_path(track, params, delta, seed=child)
        if clip_to_grid:
            path = clip_path(path, config.grid)
        dp = discretize(path, config.grid)
        paths.append(path)
        dps.append(dp)
        designs.append(build_design(dp, config.grid, config.specs, config.spline, config.evaluator,
                                    use_censored_tail=config.use_censored_tail))
    return params, paths, dps, designs


def clip_path(path, grid: RasterGrid):
    """Clamp positions into the grid extent (just inside the outer edges)."""
    xmin, xmax, ymin, ymax = grid.extent
    eps = 1e-6 * grid.cell_size
    pos = path.positions.copy()
    pos[:, 0] = np.clip(pos[:, 0], xmin + eps, xmax - eps)
    pos[:, 1] = np.clip(pos[:, 1], ymin + eps, ymax - eps)
    moved = int(np.sum(np.any(pos != path.positions, axis=1)))
    if moved:
        log.info("clipped %d of %d imputed positions to the grid", moved, len(pos))
    return ImputedPath(path.times, pos, path.source_track, path.draw_seed)
