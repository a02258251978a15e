"""Frequentist coverage of single-proportion interval estimators."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy import stats

from ._rng import substream
from .intervals import SINGLE_ESTIMATORS, CountPair

__all__ = ["CoverageReport", "coverage_simulation", "interval_table", "default_p_grid"]

EXACT_MAX_N = 10_000


def default_p_grid(step: float = 0.001) -> np.ndarray:
    return np.round(np.arange(step, 1.0 - step / 2, step), 12)


@dataclass
class CoverageReport:
    estimator: str
    n: int
    level: float
    mode: str
    p_grid: np.ndarray
    coverage: np.ndarray
    mean_width: np.ndarray

    def __post_init__(self):
        if np.any((self.coverage < 0) | (self.coverage > 1 + 1e-12)):
            raise ValueError("coverage must lie in [0, 1]")

    @property
    def relative_width(self) -> np.ndarray:
        return self.mean_width / self.p_grid

    def undercovered(self, threshold: float | None = None) -> np.ndarray:
        """Grid points whose coverage falls below ``threshold`` (default: the nominal level)."""
        t = self.level if threshold is None else threshold
        return self.p_grid[self.coverage < t]

    def rows(self) -> list[dict]:
        return [
            {"p": float(p), "coverage": float(c), "mean_width": float(w), "relative_width": float(w / p)}
            for p, c, w in zip(self.p_grid, self.coverage, self.mean_width)
        ]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=["p", "coverage", "mean_width", "relative_width"])
            w.writeheader()
            for r in self.rows():
                w.writerow({k: f"{v:.10g}" for k, v in r.items()})


def interval_table(estimator: str, n: int, level: float = 0.95) -> np.ndarray:
    """``(n + 1, 2)`` array of interval endpoints for every possible count."""
    try:
        fn = SINGLE_ESTIMATORS[estimator]
    except KeyError:
        raise ValueError(f"unknown estimator {estimator!r}; choose from {sorted(SINGLE_ESTIMATORS)}") from None
    out = np.empty((n + 1, 2))
    for k in range(n + 1):
        e = fn(CountPair(k, n), level)
        out[k] = e.lower, e.upper
    return out


def coverage_simulation(
    estimator: str,
    n: int,
    p_grid=None,
    level: float = 0.95,
    mode: str = "exact",
    n_mc: int = 100_000,
    seed: int = 0,
) -> CoverageReport:
    """Coverage probability and mean width at each ``p``.

    ``exact`` weights every count ``k`` by its binomial probability (no Monte
    Carlo noise); ``mc`` draws ``n_mc`` counts per grid point.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if mode not in ("exact", "mc"):
        raise ValueError(f"mode must be 'exact' or 'mc', got {mode!r}")
    if mode == "exact" and n > EXACT_MAX_N:
        raise ValueError(f"exact enumeration is limited to n <= {EXACT_MAX_N}; use mode='mc'")
    p_grid = default_p_grid() if p_grid is None else np.asarray(p_grid, dtype=float)
    if np.any((p_grid <= 0) | (p_grid >= 1)):
        raise ValueError("p grid must lie strictly inside (0, 1)")

    table = interval_table(estimator, n, level)
    lo, hi = table[:, 0], table[:, 1]
    width = hi - lo
    cover = (lo[None, :] <= p_grid[:, None]) & (p_grid[:, None] <= hi[None, :])

    if mode == "exact":
        pmf = stats.binom.pmf(np.arange(n + 1)[None, :], n, p_grid[:, None])
        coverage = (pmf * cover).sum(axis=1)
        mean_width = pmf @ width
    else:
        coverage = np.empty(p_grid.size)
        mean_width = np.empty(p_grid.size)
        for i, p in enumerate(p_grid):
            k = substream(seed, i).binomial(n, p, size=n_mc)
            coverage[i] = cover[i, k].mean()
            mean_width[i] = width[k].mean()
    return CoverageReport(estimator, n, level, mode, p_grid, np.clip(coverage, 0.0, 1.0), mean_width)
