"""Readers and writers for rasters, telemetry, paths, designs and reports."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np
import pandas as pd

from .ctcrw import ImputedPath, Track
from .design import DesignData
from .discretize import DiscretePath
from .grid import DIRECTION_NAMES, RasterGrid

ASCII_KEYS = ("ncols", "nrows", "xllcorner", "yllcorner", "cellsize", "nodata_value")


class FormatError(ValueError):
    """A file does not follow the expected layout."""


def _require(path) -> Path:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such file: {path}")
    return path


# ---------------------------------------------------------------------------
# rasters


def read_ascii_grid(path) -> tuple[dict, np.ndarray]:
    """Header and values of an ESRI ASCII grid.

    Values are returned flat in this package's row order (south row first);
    NODATA cells come back as NaN.
    """
    path = _require(path)
    header = {}
    lines = path.read_text().splitlines()
    i = 0
    while i < len(lines):
        parts = lines[i].split()
        if parts and parts[0].lower() not in ASCII_KEYS:
            break
        if parts:
            header[parts[0].lower()] = float(parts[1])
        i += 1
    missing = {"ncols", "nrows", "xllcorner", "yllcorner", "cellsize"} - header.keys()
    if missing:
        raise FormatError(f"{path}: missing header keys {sorted(missing)}")
    n_rows, n_cols = int(header["nrows"]), int(header["ncols"])
    values = np.array(" ".join(lines[i:]).split(), dtype=float)
    if values.size != n_rows * n_cols:
        raise FormatError(f"{path}: expected {n_rows * n_cols} values, found {values.size}")
    grid = values.reshape(n_rows, n_cols)[::-1]
    if "nodata_value" in header:
        grid = np.where(grid == header["nodata_value"], np.nan, grid)
    return header, grid.ravel()


def write_ascii_grid(path, grid: RasterGrid, values, nodata: float = -9999.0) -> None:
    values = np.asarray(values, dtype=float).reshape(grid.n_rows, grid.n_cols)
    values = np.where(grid.valid.reshape(values.shape) & np.isfinite(values), values, nodata)
    with Path(path).open("w") as fh:
        fh.write(f"ncols {grid.n_cols}\nnrows {grid.n_rows}\n")
        fh.write(f"xllcorner {grid.origin_x!r}\nyllcorner {grid.origin_y!r}\n")
        fh.write(f"cellsize {grid.cell_size!r}\nNODATA_value {nodata!r}\n")
        for row in values[::-1]:
            fh.write(" ".join(repr(float(v)) for v in row) + "\n")


def load_grid(layer_paths: dict) -> RasterGrid:
    """Build a grid from one ASCII raster per layer; all must share a header.

    A cell is NODATA if it is NODATA in any layer.
    """
    if not layer_paths:
        raise FormatError("at least one raster layer is required")
    headers, layers = {}, {}
    for name, p in layer_paths.items():
        headers[name], layers[name] = read_ascii_grid(p)
    first_name, first = next(iter(headers.items()))
    keys = ("ncols", "nrows", "xllcorner", "yllcorner", "cellsize")
    for name, h in headers.items():
        if any(h[k] != first[k] for k in keys):
            raise FormatError(f"raster {name!r} does not align with {first_name!r}")
    valid = np.all([np.isfinite(v) for v in layers.values()], axis=0)
    layers = {k: np.where(valid, v, 0.0) for k, v in layers.items()}
    return RasterGrid(int(first["nrows"]), int(first["ncols"]), first["cellsize"],
                      first["xllcorner"], first["yllcorner"], layers, valid)


# ---------------------------------------------------------------------------
# telemetry and paths


def _parse_times(col: pd.Series) -> np.ndarray:
    numeric = pd.to_numeric(col, errors="coerce")
    if numeric.notna().all():
        return numeric.to_numpy(dtype=float)
    stamps = pd.to_datetime(col, utc=True, format="ISO8601")
    return (stamps - pd.Timestamp(0, tz="UTC")).dt.total_seconds().to_numpy()


def read_tracks(path) -> list[Track]:
    """Tracks from an ``id,time,x,y`` CSV; rows are sorted by time within id."""
    path = _require(path)
    df = pd.read_csv(path, dtype={"id": str}, float_precision="round_trip")
    missing = {"id", "time", "x", "y"} - set(df.columns)
    if missing:
        raise FormatError(f"{path}: missing columns {sorted(missing)}")
    df["t"] = _parse_times(df["time"])
    tracks = []
    for tid, sub in df.groupby("id", sort=False):
        sub = sub.sort_values("t", kind="stable")
        tracks.append(Track(tid, sub["t"].to_numpy(), sub[["x", "y"]].to_numpy(dtype=float)))
    return tracks


def write_tracks(path, tracks) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "time", "x", "y"])
        for tr in tracks:
            for t, (x, y) in zip(tr.times, tr.positions):
                w.writerow([tr.id, repr(float(t)), repr(float(x)), repr(float(y))])


def write_imputed_path(path, draw: int, ip: ImputedPath) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["draw", "time", "x", "y"])
        for t, (x, y) in zip(ip.times, ip.positions):
            w.writerow([draw, repr(float(t)), repr(float(x)), repr(float(y))])


def read_imputed_path(path, source_track: str = "") -> ImputedPath:
    df = pd.read_csv(_require(path), float_precision="round_trip")
    return ImputedPath(df["time"].to_numpy(float), df[["x", "y"]].to_numpy(float), source_track)


def write_discrete_path(path, dp: DiscretePath) -> None:
    res = dp.residence_times
    last = dp.n_visits - 1
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["visit", "cell", "entry_time", "residence", "censored"])
        for k, (c, t, r) in enumerate(zip(dp.cells, dp.clock_times, res)):
            w.writerow([k, int(c), repr(float(t)), repr(float(r)), int(dp.censored and k == last)])


def read_discrete_path(path) -> DiscretePath:
    df = pd.read_csv(_require(path), float_precision="round_trip")
    clock = df["entry_time"].to_numpy(float)
    end = float(clock[-1] + df["residence"].iloc[-1])
    return DiscretePath(df["cell"].to_numpy(np.int64), clock, end, bool(df["censored"].iloc[-1]))


def write_design(path, design: DesignData) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["row", "t_index", "neighbor_dir", "z", "offset", *design.columns])
        for i in range(design.n_rows):
            w.writerow([
                i, int(design.block[i]), DIRECTION_NAMES[design.neighbor_dir[i]], int(design.z[i]),
                repr(float(design.offset[i])), *(repr(float(v)) for v in design.X[i]),
            ])


# ---------------------------------------------------------------------------
# reports


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, np.generic):
        return _jsonable(obj.item())
    if isinstance(obj, float) and not np.isfinite(obj):
        return None
    return obj


def write_json(path, obj) -> None:
    with Path(path).open("w") as fh:
        json.dump(_jsonable(obj), fh, indent=2, sort_keys=False)
        fh.write("\n")


def read_json(path) -> dict:
    with _require(path).open() as fh:
        return json.load(fh)


def write_rows(path, rows: list[dict], columns=None) -> None:
    """CSV from a list of dicts, columns in the order given (or of the first row)."""
    columns = list(columns or (rows[0].keys() if rows else []))
    with Path(path).open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=columns, extrasaction="ignore")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})


def write_chain(path, draws: np.ndarray, columns) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iter", *columns])
        for i, row in enumerate(draws):
            w.writerow([i, *(repr(float(v)) for v in row)])


RECOVERY_COLUMNS = ("covariate", "true", "prop_nonzero", "prop_zero", "min", "max")


def write_recovery(path, rows: list[dict]) -> None:
    write_rows(path, rows, RECOVERY_COLUMNS)
