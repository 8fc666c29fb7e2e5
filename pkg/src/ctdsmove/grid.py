"""Raster study area with rook adjacency and derived feature layers."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

# Neighbor order is fixed: east, north, west, south.
ROOK_STEPS = ((0, 1), (1, 0), (0, -1), (-1, 0))  # (d_row, d_col)
ROOK_DIRECTIONS = np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, -1.0]])
DIRECTION_NAMES = ("E", "N", "W", "S")


class GridError(ValueError):
    """Invalid cell, layer or feature request on a raster grid."""


@dataclass(frozen=True)
class RasterGrid:
    """Row-major raster grid.

    Row 0 is the southernmost row, so the center of cell ``(row, col)`` is
    ``(origin_x + (col + 0.5) * cell_size, origin_y + (row + 0.5) * cell_size)``.
    Cell index is ``row * n_cols + col``.

    Parameters
    ----------
    n_rows, n_cols : int
        Grid shape.
    cell_size : float
        Cell edge length in meters.
    origin_x, origin_y : float
        Lower-left corner of the grid.
    layers : dict of str to ndarray
        Named per-cell layers, each flat of length ``n_rows * n_cols``.
    valid : ndarray of bool, optional
        False for NODATA cells. Defaults to all True.
    """

    n_rows: int
    n_cols: int
    cell_size: float
    origin_x: float = 0.0
    origin_y: float = 0.0
    layers: dict = field(default_factory=dict)
    valid: np.ndarray | None = None

    def __post_init__(self):
        if self.n_rows < 1 or self.n_cols < 1:
            raise GridError("grid must have at least one cell")
        if not self.cell_size > 0:
            raise GridError(f"cell_size must be positive, got {self.cell_size}")
        layers = {}
        for name, values in self.layers.items():
            arr = np.asarray(values, dtype=float).reshape(-1)
            if arr.size != self.n_cells:
                raise GridError(
                    f"layer {name!r} has {arr.size} values, expected {self.n_cells}"
                )
            arr.setflags(write=False)
            layers[name] = arr
        object.__setattr__(self, "layers", layers)
        if self.valid is None:
            valid = np.ones(self.n_cells, dtype=bool)
        else:
            valid = np.asarray(self.valid, dtype=bool).reshape(-1)
            if valid.size != self.n_cells:
                raise GridError("valid mask has the wrong size")
        valid.setflags(write=False)
        object.__setattr__(self, "valid", valid)

    @property
    def n_cells(self) -> int:
        return self.n_rows * self.n_cols

    @property
    def extent(self) -> tuple[float, float, float, float]:
        """(xmin, xmax, ymin, ymax)."""
        return (
            self.origin_x,
            self.origin_x + self.n_cols * self.cell_size,
            self.origin_y,
            self.origin_y + self.n_rows * self.cell_size,
        )

    def with_layers(self, **layers) -> "RasterGrid":
        merged = dict(self.layers)
        merged.update(layers)
        return RasterGrid(
            self.n_rows,
            self.n_cols,
            self.cell_size,
            self.origin_x,
            self.origin_y,
            merged,
            self.valid,
        )

    def layer(self, name: str) -> np.ndarray:
        try:
            return self.layers[name]
        except KeyError:
            raise GridError(
                f"unknown layer {name!r}; available: {sorted(self.layers)}"
            ) from None

    def check_cell(self, cell: int) -> int:
        cell = int(cell)
        if not 0 <= cell < self.n_cells:
            raise GridError(f"cell index {cell} outside grid of {self.n_cells} cells")
        return cell

    def cell_index(self, row: int, col: int) -> int:
        if not (0 <= row < self.n_rows and 0 <= col < self.n_cols):
            raise GridError(f"(row, col) = ({row}, {col}) outside grid")
        return row * self.n_cols + col

    def row_col(self, cell: int) -> tuple[int, int]:
        return divmod(self.check_cell(cell), self.n_cols)

    def centers(self) -> np.ndarray:
        """Cell centers, shape (n_cells, 2)."""
        rows, cols = np.divmod(np.arange(self.n_cells), self.n_cols)
        return np.column_stack(
            [
                self.origin_x + (cols + 0.5) * self.cell_size,
                self.origin_y + (rows + 0.5) * self.cell_size,
            ]
        )

    def center(self, cell: int) -> np.ndarray:
        row, col = self.row_col(cell)
        return np.array(
            [
                self.origin_x + (col + 0.5) * self.cell_size,
                self.origin_y + (row + 0.5) * self.cell_size,
            ]
        )

    def locate(self, x: float, y: float) -> int:
        """Cell containing a point, or -1 when off-grid.

        Points on an interior gridline belong to the cell above/right of it.
        """
        col = int(np.floor((x - self.origin_x) / self.cell_size))
        row = int(np.floor((y - self.origin_y) / self.cell_size))
        if 0 <= row < self.n_rows and 0 <= col < self.n_cols:
            return row * self.n_cols + col
        return -1


def neighbors(grid: RasterGrid, cell: int) -> list[tuple[int, np.ndarray]]:
    """Rook neighbors of ``cell`` in E, N, W, S order with unit directions.

    NODATA neighbors are left out.
    """
    row, col = grid.row_col(cell)
    out = []
    for (dr, dc), w in zip(ROOK_STEPS, ROOK_DIRECTIONS):
        r, c = row + dr, col + dc
        if 0 <= r < grid.n_rows and 0 <= c < grid.n_cols:
            j = r * grid.n_cols + c
            if grid.valid[j]:
                out.append((j, w.copy()))
    return out


def neighbor_table(grid: RasterGrid) -> np.ndarray:
    """Array (n_cells, 4) of neighbor indices in E, N, W, S order, -1 if absent."""
    rows, cols = np.divmod(np.arange(grid.n_cells), grid.n_cols)
    table = np.full((grid.n_cells, 4), -1, dtype=np.int64)
    for k, (dr, dc) in enumerate(ROOK_STEPS):
        r, c = rows + dr, cols + dc
        ok = (r >= 0) & (r < grid.n_rows) & (c >= 0) & (c < grid.n_cols)
        idx = np.where(ok, r * grid.n_cols + c, -1)
        ok &= np.where(ok, grid.valid[np.clip(idx, 0, None)], False)
        table[:, k] = np.where(ok, idx, -1)
    return table


def _nearest_feature(grid: RasterGrid, feature_mask) -> tuple[np.ndarray, np.ndarray]:
    mask = np.asarray(feature_mask, dtype=bool).reshape(-1)
    if mask.size != grid.n_cells:
        raise GridError("feature mask has the wrong size")
    feature_cells = np.flatnonzero(mask)
    if feature_cells.size == 0:
        raise GridError("no feature cells in mask")
    centers = grid.centers()
    tree = cKDTree(centers[feature_cells])
    k = min(16, feature_cells.size)
    dist, idx = tree.query(centers, k=k)
    if k == 1:
        dist, idx = dist[:, None], idx[:, None]
    # Ties go to the smallest cell index.
    tol = 1e-9 * grid.cell_size
    tied = dist <= dist[:, :1] + tol
    cand = np.where(tied, feature_cells[np.minimum(idx, feature_cells.size - 1)], np.iinfo(np.int64).max)
    nearest = cand.min(axis=1)
    for i in np.flatnonzero(tied[:, -1] & (k < feature_cells.size)):
        ball = tree.query_ball_point(centers[i], dist[i, 0] + tol)
        nearest[i] = feature_cells[ball].min()
    return dist[:, 0], nearest


def distance_to_feature(grid: RasterGrid, feature_mask) -> np.ndarray:
    """Center-to-center Euclidean distance from each cell to the nearest feature cell."""
    dist, _ = _nearest_feature(grid, feature_mask)
    return dist


def bearing_to_nearest_feature(grid: RasterGrid, feature_mask) -> np.ndarray:
    """Unit vectors (n_cells, 2) toward the nearest feature cell; zero inside features."""
    dist, nearest = _nearest_feature(grid, feature_mask)
    centers = grid.centers()
    offset = centers[nearest] - centers
    out = np.zeros_like(offset)
    far = dist > 0
    out[far] = offset[far] / dist[far, None]
    return out
