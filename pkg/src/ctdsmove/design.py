"""Latent Poisson design for CTDS transitions.

Each completed transition contributes one row per available rook neighbor of
the occupied cell: response 1 for the realized destination and 0 otherwise,
with offset log(residence time).  Time-varying covariates are expanded in a
periodic B-spline basis evaluated at the cell entry time.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.interpolate import BSpline

from .ctcrw import ImputedPath
from .discretize import DiscretePath
from .grid import ROOK_DIRECTIONS, RasterGrid, bearing_to_nearest_feature, neighbor_table

log = logging.getLogger(__name__)

MIN_RESIDENCE = 1e-9  # seconds

KINDS = (
    "intercept",
    "location",
    "directional_feature",
    "directional_field",
    "directional_conspecific",
    "directional_persistence",
)


class DesignError(ValueError):
    pass


@dataclass(frozen=True)
class SplineConfig:
    period: float = 86400.0
    knot_spacing: float = 21600.0
    degree: int = 3

    def __post_init__(self):
        if self.degree < 1:
            raise ValueError("spline degree must be >= 1")
        if not (self.period > 0 and self.knot_spacing > 0):
            raise ValueError("period and knot_spacing must be positive")
        ratio = self.period / self.knot_spacing
        if abs(ratio - round(ratio)) > 1e-9 or round(ratio) < 1:
            raise ValueError("period must be a whole multiple of knot_spacing")

    @property
    def n_spl(self) -> int:
        return int(round(self.period / self.knot_spacing))

    @cached_property
    def _cardinal(self):
        return BSpline.basis_element(np.arange(self.degree + 2, dtype=float), extrapolate=False)


def spline_basis(config: SplineConfig, t) -> np.ndarray:
    """Periodic B-spline basis at times ``t``.

    Basis function ``k`` is the cardinal B-spline starting at knot ``k``
    wrapped around the period.  Returns shape ``(n_spl,)`` for scalar ``t``
    and ``(len(t), n_spl)`` otherwise.
    """
    scalar = np.ndim(t) == 0
    t = np.atleast_1d(np.asarray(t, dtype=float))
    n = config.n_spl
    u = np.mod(t, config.period) / config.knot_spacing
    u = np.where(u >= n, 0.0, u)  # mod can round up to the period
    shift = np.mod(u[:, None] - np.arange(n)[None, :], n)
    out = np.zeros((t.size, n))
    support = config.degree + 1
    for wrap in range(int(np.ceil(support / n)) + 1):
        arg = shift + wrap * n
        inside = arg < support
        if not inside.any():
            break
        vals = config._cardinal(np.where(inside, arg, 0.0))
        out += np.where(inside, np.nan_to_num(vals), 0.0)
    return out[0] if scalar else out


def directional_value(v, w) -> float:
    """Inner product of a bias vector with a move direction."""
    return float(np.dot(v, w))


def conspecific_direction(own_position, companion: ImputedPath, t: float, cell_size: float) -> np.ndarray:
    """Unit vector toward the companion's interpolated position at ``t``.

    Zero when the companion is within half a cell.
    """
    target = companion.position_at(t)
    d = target - np.asarray(own_position, dtype=float)
    dist = np.hypot(d[0], d[1])
    if dist < cell_size / 2:
        return np.zeros(2)
    return d / dist


@dataclass(frozen=True)
class CovariateSpec:
    """One driver of movement.

    ``layer`` names the location layer (``location``) or the feature mask
    (``directional_feature``); ``field`` names the x/y component layers of a
    fixed vector field (``directional_field``); ``companion`` is the other
    animal's path (``directional_conspecific``).
    """

    name: str
    kind: str
    layer: str | None = None
    field: tuple | None = None
    companion: ImputedPath | None = None
    time_varying: bool = False

    def __post_init__(self):
        if self.kind not in KINDS:
            raise DesignError(f"unknown covariate kind {self.kind!r}; expected one of {KINDS}")
        if self.kind in ("location", "directional_feature") and not self.layer:
            raise DesignError(f"covariate {self.name!r} ({self.kind}) needs a layer")
        if self.kind == "directional_field" and (self.field is None or len(self.field) != 2):
            raise DesignError(f"covariate {self.name!r} needs two field layers")
        if self.kind == "directional_conspecific" and self.companion is None:
            raise DesignError(f"covariate {self.name!r} needs a companion path")

    @property
    def directional(self) -> bool:
        return self.kind.startswith("directional")


@dataclass
class DesignData:
    """Rows of the latent Poisson regression.

    ``block`` is the transition index of each row (rows of one transition form
    a block), ``neighbor_dir`` indexes E, N, W, S, and ``weights`` scale each
    row's log-likelihood contribution (1 unless stacked).
    """

    X: np.ndarray
    z: np.ndarray
    offset: np.ndarray
    block: np.ndarray
    neighbor_dir: np.ndarray
    columns: list
    groups: list
    unpenalized: np.ndarray
    weights: np.ndarray = None
    source_cell: np.ndarray = field(default=None, repr=False)
    entry_time: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        n = self.z.size
        if self.weights is None:
            self.weights = np.ones(n)
        if self.X.shape != (n, len(self.columns)):
            raise DesignError("design matrix shape does not match rows/columns")
        if len(self.groups) != len(self.columns):
            raise DesignError("one group label per column required")

    @property
    def tau(self) -> np.ndarray:
        return np.exp(self.offset)

    @property
    def n_rows(self) -> int:
        return self.z.size

    @property
    def n_cols(self) -> int:
        return len(self.columns)

    @property
    def n_blocks(self) -> int:
        return np.unique(self.block).size

    def subset_rows(self, mask) -> "DesignData":
        mask = np.asarray(mask)
        return DesignData(
            self.X[mask], self.z[mask], self.offset[mask], self.block[mask],
            self.neighbor_dir[mask], list(self.columns), list(self.groups),
            self.unpenalized.copy(), self.weights[mask],
            None if self.source_cell is None else self.source_cell[mask],
            None if self.entry_time is None else self.entry_time[mask],
        )

    def subset_columns(self, cols) -> "DesignData":
        cols = np.asarray(cols)
        if cols.dtype == bool:
            cols = np.flatnonzero(cols)
        return DesignData(
            self.X[:, cols], self.z, self.offset, self.block, self.neighbor_dir,
            [self.columns[c] for c in cols], [self.groups[c] for c in cols],
            self.unpenalized[cols], self.weights, self.source_cell, self.entry_time,
        )


class CovariateEvaluator:
    """Evaluates covariate columns for (source cell, time, previous step) triples.

    Shared by the design builder and the simulator so both use identical
    rate definitions.
    """

    def __init__(self, grid: RasterGrid, specs, spline: SplineConfig | None = None):
        names = [s.name for s in specs]
        if len(set(names)) != len(names):
            raise DesignError(f"covariate names must be unique: {names}")
        if any(s.time_varying for s in specs) and spline is None:
            raise DesignError("time-varying covariates need a spline configuration")
        self.grid = grid
        self.specs = list(specs)
        self.spline = spline
        self.nbr = neighbor_table(grid)
        self.centers = grid.centers()
        self._static = {}
        for s in self.specs:
            if s.kind == "location":
                self._static[s.name] = grid.layer(s.layer)
            elif s.kind == "directional_feature":
                mask = (grid.layer(s.layer) != 0) & grid.valid
                self._static[s.name] = bearing_to_nearest_feature(grid, mask)
            elif s.kind == "directional_field":
                self._static[s.name] = np.column_stack([grid.layer(s.field[0]), grid.layer(s.field[1])])

        self.columns, self.groups, unpen = [], [], []
        self.slices = {}
        for s in self.specs:
            if s.time_varying:
                cols = [f"{s.name}:s{k}" for k in range(spline.n_spl)]
            else:
                cols = [s.name]
            self.slices[s.name] = slice(len(self.columns), len(self.columns) + len(cols))
            self.columns += cols
            self.groups += [s.name] * len(cols)
            unpen += [s.kind == "intercept"] * len(cols)
        self.unpenalized = np.array(unpen, dtype=bool)

    @property
    def n_cols(self) -> int:
        return len(self.columns)

    @property
    def time_dependent(self) -> bool:
        return any(s.time_varying or s.kind == "directional_conspecific" for s in self.specs)

    def bias_vectors(self, spec: CovariateSpec, src, times, prev_dir) -> np.ndarray:
        """Per-transition bias vector v, shape (T, 2)."""
        if spec.kind in ("directional_feature", "directional_field"):
            return self._static[spec.name][src]
        if spec.kind == "directional_persistence":
            return np.asarray(prev_dir, dtype=float).reshape(-1, 2)
        if spec.kind == "directional_conspecific":
            cs = self.grid.cell_size
            return np.array(
                [conspecific_direction(self.centers[c], spec.companion, t, cs) for c, t in zip(src, times)]
            ).reshape(-1, 2)
        raise DesignError(f"{spec.kind} has no bias vector")  # pragma: no cover

    def values(self, src, times, prev_dir, skip=()) -> np.ndarray:
        """Covariate values for all four rook directions, shape (T, 4, n_cols).

        Specs whose kind is in ``skip`` contribute zero columns.
        """
        src = np.asarray(src, dtype=np.int64).reshape(-1)
        times = np.asarray(times, dtype=float).reshape(-1)
        T = src.size
        basis = spline_basis(self.spline, times) if self.spline is not None and T else None
        blocks = []
        for s in self.specs:
            if s.kind in skip:
                base = np.zeros((T, 4))
            elif s.kind == "intercept":
                base = np.ones((T, 4))
            elif s.kind == "location":
                base = np.repeat(self._static[s.name][src][:, None], 4, axis=1)
            else:
                v = self.bias_vectors(s, src, times, prev_dir)
                base = v @ ROOK_DIRECTIONS.T
            if s.time_varying:
                blocks.append(base[:, :, None] * basis[:, None, :])
            else:
                blocks.append(base[:, :, None])
        if not blocks:
            return np.zeros((T, 4, 0))
        return np.concatenate(blocks, axis=2)


def previous_steps(cells: np.ndarray, grid: RasterGrid) -> np.ndarray:
    """Unit direction of the step into each visit; zero for the first visit."""
    out = np.zeros((cells.size, 2))
    if cells.size > 1:
        rows, cols = np.divmod(cells, grid.n_cols)
        out[1:, 0] = np.diff(cols)
        out[1:, 1] = np.diff(rows)
    return out


def build_design(dp: DiscretePath, grid: RasterGrid, specs, spline: SplineConfig | None = None,
                 evaluator: CovariateEvaluator | None = None, use_censored_tail: bool = False) -> DesignData:
    """Expand a discrete path into latent Poisson rows.

    NODATA and off-grid neighbors are left out of a block; a realized
    destination that is not an available neighbor raises :class:`DesignError`.
    With ``use_censored_tail`` the final, incomplete visit adds one more block
    with all ``z = 0``, contributing only its survival term.
    """
    ev = evaluator or CovariateEvaluator(grid, specs, spline)
    tail = use_censored_tail and dp.censored and dp.residence_times[-1] > 0
    n_tr = dp.n_visits - 1
    src = dp.cells[:-1]
    dst = dp.cells[1:]
    times = dp.clock_times[:-1]
    tau = dp.residence_times[:-1]
    if tail:
        n_tr += 1
        src = dp.cells
        dst = np.append(dst, -1)
        times = dp.clock_times
        tau = dp.residence_times
    if np.any(tau < 0):
        bad = int(np.flatnonzero(tau < 0)[0])
        raise DesignError(f"transition {bad} has negative residence time {tau[bad]}")
    zero = tau == 0
    if zero.any():
        # exact-corner crossings give zero-length visits; their survival term is exp(0) = 1
        log.debug("%d zero-length visits floored at %g s", int(zero.sum()), MIN_RESIDENCE)
        tau = np.where(zero, MIN_RESIDENCE, tau)
    prev = previous_steps(dp.cells, grid)
    if not tail:
        prev = prev[:-1]

    nbr = ev.nbr[src] if n_tr else np.zeros((0, 4), dtype=np.int64)
    avail = nbr >= 0
    hit = nbr == dst[:, None]
    missing = ~np.any(hit & avail, axis=1)
    if tail:
        missing[-1] = False
    if np.any(missing):
        bad = int(np.flatnonzero(missing)[0])
        raise DesignError(
            f"transition {bad}: destination {dst[bad]} is not an available neighbor of {src[bad]}"
        )

    vals = ev.values(src, times, prev)
    t_idx, d_idx = np.nonzero(avail)
    X = vals[t_idx, d_idx, :]
    z = hit[t_idx, d_idx].astype(float)
    offset = np.log(tau)[t_idx]
    return DesignData(
        X=X, z=z, offset=offset, block=t_idx.astype(np.int64), neighbor_dir=d_idx.astype(np.int64),
        columns=list(ev.columns), groups=list(ev.groups), unpenalized=ev.unpenalized.copy(),
        source_cell=src[t_idx], entry_time=times[t_idx],
    )


def varying_coefficient(spline: SplineConfig, alpha, t) -> np.ndarray:
    """beta(t) = sum_k alpha_k phi_k(t)."""
    return spline_basis(spline, t) @ np.asarray(alpha, dtype=float)
