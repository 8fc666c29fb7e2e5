"""Report figures written to files (non-interactive Agg backend)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _save(fig, path) -> Path:
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_beta_curves(path, curves: dict) -> Path:
    """One panel per covariate of beta(t) against hour of day.

    ``curves`` maps a covariate name to a dict with ``hour``, ``estimate``
    and optionally ``lower``/``upper`` arrays.
    """
    n = max(len(curves), 1)
    fig, axes = plt.subplots(n, 1, figsize=(6, 2.4 * n), sharex=True, squeeze=False)
    for ax, (name, c) in zip(axes[:, 0], curves.items()):
        hour = np.asarray(c["hour"])
        if "lower" in c:
            ax.fill_between(hour, c["lower"], c["upper"], color="0.8", lw=0)
        ax.plot(hour, c["estimate"], color="k")
        ax.axhline(0.0, color="0.5", lw=0.8, ls="--")
        ax.set_ylabel(name)
    axes[-1, 0].set_xlabel("hour of day")
    axes[-1, 0].set_xlim(0, 24)
    return _save(fig, path)


def plot_coefficients(path, table: list[dict]) -> Path:
    """Point estimates with interval bars (when present), one row per coefficient."""
    names = [r["covariate"] for r in table]
    est = np.array([r["estimate"] for r in table], dtype=float)
    lo = np.array([r.get("lower", np.nan) for r in table], dtype=float)
    hi = np.array([r.get("upper", np.nan) for r in table], dtype=float)
    y = np.arange(len(names))[::-1]
    fig, ax = plt.subplots(figsize=(6, 0.35 * len(names) + 1.2))
    ok = np.isfinite(lo) & np.isfinite(hi)
    ax.hlines(y[ok], lo[ok], hi[ok], color="0.4")
    ax.plot(est, y, "o", color="k", ms=4)
    ax.axvline(0.0, color="0.5", lw=0.8, ls="--")
    ax.set_yticks(y, names)
    ax.set_xlabel("coefficient")
    return _save(fig, path)


def plot_cv_curve(path, cv_curve: dict) -> Path:
    g = np.asarray(cv_curve["gamma"])
    m = np.asarray(cv_curve["mean_deviance"])
    sd = np.asarray(cv_curve["sd"])
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.errorbar(g, m, yerr=sd, fmt="o", ms=3, color="k", ecolor="0.6")
    ax.axvline(g[cv_curve["best_index"]], color="C3", lw=1)
    if "min_index" in cv_curve:
        ax.axvline(g[cv_curve["min_index"]], color="C0", lw=1, ls=":")
    ax.set_xscale("log")
    ax.set_xlabel("penalty")
    ax.set_ylabel("held-out deviance per transition")
    return _save(fig, path)


def plot_traces(path, draws: np.ndarray, columns) -> Path:
    """Trace and marginal histogram per coefficient."""
    p = draws.shape[1]
    fig, axes = plt.subplots(p, 2, figsize=(8, 1.8 * p), squeeze=False,
                             gridspec_kw={"width_ratios": [3, 1]})
    for j in range(p):
        axes[j, 0].plot(draws[:, j], lw=0.4, color="k")
        axes[j, 0].set_ylabel(columns[j], fontsize=8)
        axes[j, 1].hist(draws[:, j], bins=40, color="0.5", orientation="horizontal")
        axes[j, 1].set_yticks([])
    axes[-1, 0].set_xlabel("iteration")
    return _save(fig, path)


def plot_recovery(path, names, estimates: np.ndarray, truth) -> Path:
    """Strip of replicate estimates per covariate with the true value marked."""
    estimates = np.asarray(estimates, dtype=float).reshape(-1, len(names))
    rng = np.random.default_rng(0)  # jitter only
    fig, ax = plt.subplots(figsize=(1.6 * len(names) + 2, 3.5))
    for j, name in enumerate(names):
        x = j + 0.15 * rng.uniform(-1, 1, estimates.shape[0])
        ax.plot(x, estimates[:, j], "o", ms=3, alpha=0.5, color="k")
        ax.hlines(truth[j], j - 0.3, j + 0.3, color="C3", lw=2)
    ax.set_xticks(range(len(names)), names)
    ax.axhline(0.0, color="0.5", lw=0.8, ls="--")
    ax.set_ylabel("estimate")
    return _save(fig, path)


def plot_paths(path, grid, track=None, imputed=(), discrete=None) -> Path:
    """Telemetry fixes, imputed paths and a discrete path over the grid extent."""
    xmin, xmax, ymin, ymax = grid.extent
    fig, ax = plt.subplots(figsize=(5, 5))
    for ip in imputed:
        ax.plot(ip.positions[:, 0], ip.positions[:, 1], lw=0.5, alpha=0.6)
    if discrete is not None:
        c = grid.centers()[discrete.cells]
        ax.step(c[:, 0], c[:, 1], where="post", color="0.3", lw=0.8)
    if track is not None:
        ax.plot(track.positions[:, 0], track.positions[:, 1], "k.", ms=4)
    ax.set_xlim(xmin, xmax)
    ax.set_ylim(ymin, ymax)
    ax.set_aspect("equal")
    return _save(fig, path)
