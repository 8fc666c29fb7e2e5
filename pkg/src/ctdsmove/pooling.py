"""Combining fits across path imputations."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from .design import DesignData
from .glm import GlmFit


class PoolingError(ValueError):
    pass


@dataclass
class PooledFit:
    mean: np.ndarray
    covariance: np.ndarray
    K: int
    within: np.ndarray
    between: np.ndarray
    correction: float
    columns: list

    @property
    def std_err(self) -> np.ndarray:
        return np.sqrt(np.diag(self.covariance))

    def intervals(self, level: float = 0.95) -> np.ndarray:
        q = norm.ppf(0.5 + level / 2)
        se = self.std_err
        return np.column_stack([self.mean - q * se, self.mean + q * se])

    def table(self, level: float = 0.95) -> list[dict]:
        """Per-coefficient rows: estimate, s.e., interval, star when it excludes zero."""
        ci = self.intervals(level)
        return [
            {
                "covariate": c, "estimate": float(m), "se": float(s),
                "lower": float(lo), "upper": float(hi), "starred": bool(lo > 0 or hi < 0),
            }
            for c, m, s, (lo, hi) in zip(self.columns, self.mean, self.std_err, ci)
        ]


def _check_columns(columns_list):
    ref = list(columns_list[0])
    for cols in columns_list[1:]:
        if list(cols) != ref:
            diff = sorted(set(ref).symmetric_difference(cols))
            raise PoolingError(
                f"column sets differ across imputations: {diff if diff else 'same names, different order'}"
            )
    return ref


def pool(fits: list[GlmFit], finite_k_correction: bool = True) -> PooledFit:
    """Rubin's rules: mean of estimates; within + (1 + 1/K) * between covariance.

    With ``finite_k_correction=False`` the between-imputation term enters
    with weight 1.
    """
    K = len(fits)
    if K < 2:
        raise PoolingError("pooling needs at least 2 fits")
    cols = _check_columns([f.columns for f in fits])
    betas = np.array([f.beta_hat for f in fits])
    mean = betas.mean(axis=0)
    within = np.mean([f.covariance for f in fits], axis=0)
    between = np.atleast_2d(np.cov(betas, rowvar=False, ddof=1))
    corr = 1.0 + 1.0 / K if finite_k_correction else 1.0
    cov = within + corr * between
    return PooledFit(mean, 0.5 * (cov + cov.T), K, within, between, corr, cols)


def stack_designs(designs: list[DesignData]) -> DesignData:
    """Row-concatenate imputations with weight 1/K each.

    The stacked log-likelihood is the average per-imputation log-likelihood,
    so a lasso fit on the stack zeroes a coefficient for all imputations at
    once.  Block ids are renumbered to stay unique.
    """
    K = len(designs)
    if K == 0:
        raise PoolingError("nothing to stack")
    if K == 1:
        return designs[0]
    cols = _check_columns([d.columns for d in designs])
    offset_blocks = 0
    blocks = []
    for d in designs:
        blocks.append(d.block + offset_blocks)
        offset_blocks += int(d.block.max()) + 1 if d.n_rows else 0

    def cat(attr):
        parts = [getattr(d, attr) for d in designs]
        if any(p is None for p in parts):
            return None
        return np.concatenate(parts)

    return DesignData(
        X=np.vstack([d.X for d in designs]),
        z=cat("z"),
        offset=cat("offset"),
        block=np.concatenate(blocks),
        neighbor_dir=cat("neighbor_dir"),
        columns=cols,
        groups=list(designs[0].groups),
        unpenalized=designs[0].unpenalized.copy(),
        weights=np.concatenate([d.weights / K for d in designs]),
        source_cell=cat("source_cell"),
        entry_time=cat("entry_time"),
    )
