"""Continuous path to (cell sequence, residence time) reduction."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ctcrw import ImputedPath
from .grid import RasterGrid


class PathError(ValueError):
    """Path position outside the grid or on a NODATA cell."""


@dataclass(frozen=True)
class DiscretePath:
    """Ordered cell visits with entry clock times.

    Residence times are derived from consecutive entry times and ``end_time``,
    so they telescope to the path duration exactly.  The last visit is
    right-censored when ``censored`` is set.
    """

    cells: np.ndarray
    clock_times: np.ndarray
    end_time: float
    censored: bool = True

    def __post_init__(self):
        cells = np.asarray(self.cells, dtype=np.int64).reshape(-1)
        clock = np.asarray(self.clock_times, dtype=float).reshape(-1)
        if cells.size == 0 or cells.size != clock.size:
            raise ValueError("DiscretePath needs one entry time per visit")
        if np.any(np.diff(clock) < 0) or self.end_time < clock[-1]:
            raise ValueError("entry times must be non-decreasing and precede end_time")
        if np.any(cells[1:] == cells[:-1]):
            raise ValueError("consecutive visits must be to distinct cells")
        object.__setattr__(self, "cells", cells)
        object.__setattr__(self, "clock_times", clock)
        object.__setattr__(self, "end_time", float(self.end_time))

    @property
    def residence_times(self) -> np.ndarray:
        return np.diff(np.append(self.clock_times, self.end_time))

    @property
    def n_visits(self) -> int:
        return self.cells.size

    @property
    def start_time(self) -> float:
        return float(self.clock_times[0])

    def __eq__(self, other):
        if not isinstance(other, DiscretePath):
            return NotImplemented
        return (
            np.array_equal(self.cells, other.cells)
            and np.array_equal(self.clock_times, other.clock_times)
            and self.end_time == other.end_time
            and self.censored == other.censored
        )

    __hash__ = None


@dataclass(frozen=True)
class Transition:
    source: int
    dest: int
    entry_time: float
    residence: float


def _check_cell(grid: RasterGrid, row: int, col: int, t: float) -> int:
    if not (0 <= row < grid.n_rows and 0 <= col < grid.n_cols):
        raise PathError(f"path leaves the grid at time {t}")
    cell = row * grid.n_cols + col
    if not grid.valid[cell]:
        raise PathError(f"path enters NODATA cell {cell} at time {t}")
    return cell


def discretize(path: ImputedPath, grid: RasterGrid) -> DiscretePath:
    """Reduce a piecewise-linear path to rook-step cell visits.

    Gridline crossings along each straight segment are located by linear
    interpolation and applied in time order; a simultaneous vertical and
    horizontal crossing applies the vertical one first.
    """
    times = path.times
    pos = path.positions
    ox, oy, cs = grid.origin_x, grid.origin_y, grid.cell_size
    gx = (pos[:, 0] - ox) / cs
    gy = (pos[:, 1] - oy) / cs
    cols = np.floor(gx).astype(np.int64)
    rows = np.floor(gy).astype(np.int64)

    row, col = int(rows[0]), int(cols[0])
    cells = [_check_cell(grid, row, col, times[0])]
    clock = [float(times[0])]

    for k in range(times.size - 1):
        c0, c1 = int(cols[k]), int(cols[k + 1])
        r0, r1 = int(rows[k]), int(rows[k + 1])
        if c0 == c1 and r0 == r1:
            continue
        t0, t1 = times[k], times[k + 1]
        events = []  # (fraction, axis order, d_row, d_col)
        if c1 != c0:
            step = 1 if c1 > c0 else -1
            lines = range(c0 + 1, c1 + 1) if step > 0 else range(c0, c1, -1)
            span = gx[k + 1] - gx[k]
            for line in lines:
                events.append(((line - gx[k]) / span, 0, 0, step))
        if r1 != r0:
            step = 1 if r1 > r0 else -1
            lines = range(r0 + 1, r1 + 1) if step > 0 else range(r0, r1, -1)
            span = gy[k + 1] - gy[k]
            for line in lines:
                events.append(((line - gy[k]) / span, 1, step, 0))
        events.sort(key=lambda e: (e[0], e[1]))
        for frac, _, dr, dc in events:
            frac = min(max(frac, 0.0), 1.0)
            t = t0 + frac * (t1 - t0) if t1 > t0 else t0
            t = max(t, clock[-1])
            row += dr
            col += dc
            cell = _check_cell(grid, row, col, t)
            if len(cells) >= 2 and cell == cells[-2] and t == clock[-1]:
                # zero-length excursion onto a line and straight back
                cells.pop()
                clock.pop()
                continue
            cells.append(cell)
            clock.append(float(t))
        if (row, col) != (r1, c1):
            raise AssertionError("crossing bookkeeping out of sync")  # pragma: no cover

    return DiscretePath(np.array(cells), np.array(clock), float(times[-1]), censored=True)


def transition_clock_times(dp: DiscretePath) -> list[Transition]:
    """Completed transitions ``(source, dest, entry_time, residence)``."""
    res = dp.residence_times
    return [
        Transition(int(dp.cells[i]), int(dp.cells[i + 1]), float(dp.clock_times[i]), float(res[i]))
        for i in range(dp.n_visits - 1)
    ]


def cell_center_trace(dp: DiscretePath, grid: RasterGrid) -> ImputedPath:
    """Piecewise-constant cell-center trace of a discrete path.

    Each transition becomes a zero-duration segment between the two cell
    centers at the transition time, so :func:`discretize` recovers ``dp``.
    """
    centers = grid.centers()[dp.cells]
    n = dp.n_visits
    times = np.empty(2 * n)
    pos = np.empty((2 * n, 2))
    times[0::2] = dp.clock_times
    times[1:-1:2] = dp.clock_times[1:]
    times[-1] = dp.end_time
    pos[0::2] = centers
    pos[1::2] = centers
    return ImputedPath(times, pos, source_track="trace")
