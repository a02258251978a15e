"""Correlated Bernoulli population simulation (tested x infected x fatal).

Testing is independent of the (infected, fatal) pair; the pair itself is drawn
in the multinomial corner basis.  Each Monte Carlo run keeps the population
size fixed and produces eight category counts indexed by the bit pattern
``TIF``; the resulting ``8 x n_mc`` matrix is a sufficient statistic for all
reported outputs.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from ._rng import chunked_sizes, substream

__all__ = [
    "Bernoulli2DParams",
    "InadmissibleCorrelationError",
    "PopulationSimConfig",
    "CategoryStats",
    "CATEGORY_LABELS",
    "corners_from_moments",
    "correlation_range",
    "max_coupling",
    "simulate_category_matrix",
    "category_stats",
    "run_population_sim",
    "apply_test_errors",
    "nearest_rank_quantile",
]

CATEGORY_LABELS = ("000", "001", "010", "011", "100", "101", "110", "111")
Q68 = (0.5 - 0.6827 / 2, 0.5 + 0.6827 / 2)
Q95 = (0.025, 0.975)


class InadmissibleCorrelationError(ValueError):
    def __init__(self, rho: float, rho_range: tuple[float, float]):
        super().__init__(
            f"correlation {rho} inadmissible; admissible range is [{rho_range[0]:.6g}, {rho_range[1]:.6g}]"
        )
        self.rho_range = rho_range


@dataclass(frozen=True)
class Bernoulli2DParams:
    """Two correlated coins in both the moment and the corner basis.

    Corners are ordered ``(0,0), (0,1), (1,0), (1,1)`` for ``(X, Y)``.
    """

    e_x: float
    e_y: float
    rho: float
    p0: float
    p1: float
    p2: float
    p3: float

    @property
    def corners(self) -> np.ndarray:
        return np.array([self.p0, self.p1, self.p2, self.p3])


def _check_moments(e_x: float, e_y: float) -> None:
    if not (0.0 < e_x < 1.0 and 0.0 < e_y < 1.0):
        raise ValueError(f"expectations must lie in (0, 1), got {e_x}, {e_y}")


def correlation_range(e_x: float, e_y: float) -> tuple[float, float]:
    """Admissible correlation interval keeping all four corners in [0, 1]."""
    _check_moments(e_x, e_y)
    scale = np.sqrt(e_x * e_y * (1.0 - e_x) * (1.0 - e_y))
    p3_lo = max(0.0, e_x + e_y - 1.0)
    p3_hi = min(e_x, e_y)
    return (p3_lo - e_x * e_y) / scale, (p3_hi - e_x * e_y) / scale


def max_coupling(e_x: float, e_y: float) -> float:
    """Largest admissible positive correlation."""
    return correlation_range(e_x, e_y)[1]


def corners_from_moments(e_x: float, e_y: float, rho: float, tol: float = 1e-12) -> Bernoulli2DParams:
    _check_moments(e_x, e_y)
    lo, hi = correlation_range(e_x, e_y)
    if not lo - tol <= rho <= hi + tol:
        raise InadmissibleCorrelationError(rho, (lo, hi))
    p3 = rho * np.sqrt(e_x * e_y * (e_x - 1.0) * (e_y - 1.0)) + e_x * e_y
    p2 = e_x - p3
    p1 = e_y - p3
    p0 = 1.0 - (p1 + p2 + p3)
    # round-off at the admissible edge
    p = np.clip([p0, p1, p2, p3], 0.0, 1.0)
    return Bernoulli2DParams(e_x, e_y, rho, *map(float, p))


@dataclass(frozen=True)
class PopulationSimConfig:
    n_p: int
    n_t: int
    mean_t: float
    mean_i: float
    mean_f: float
    rho_if: float | None = None  # None selects the maximum coupling
    n_mc: int = 1_000_000
    seed: int = 0
    fluctuate_test_count: bool = False
    chunk: int = 1 << 16

    def __post_init__(self):
        if self.n_p < 1 or not 0 <= self.n_t <= self.n_p:
            raise ValueError("need n_p >= 1 and 0 <= n_t <= n_p")
        if not 0.0 <= self.mean_t <= 1.0:
            raise ValueError("mean_t must lie in [0, 1]")
        if self.n_mc < 1:
            raise ValueError("n_mc must be positive")

    @property
    def corners(self) -> Bernoulli2DParams:
        rho = max_coupling(self.mean_i, self.mean_f) if self.rho_if is None else self.rho_if
        params = corners_from_moments(self.mean_i, self.mean_f, rho)
        if params.p1 > 1e-12:
            raise ValueError(
                f"correlation {rho} leaves P(I=0, F=1) = {params.p1:.3g} > 0; "
                "fatalities without infection are not allowed"
            )
        return params

    @classmethod
    def from_counts(cls, k_f: int, n_p: int, k_i: int, n_t: int, **kw) -> "PopulationSimConfig":
        """Moments set to the observed maximum likelihood values."""
        return cls(n_p=n_p, n_t=n_t, mean_t=n_t / n_p, mean_i=k_i / n_t, mean_f=k_f / n_p, **kw)


def simulate_category_matrix(cfg: PopulationSimConfig) -> np.ndarray:
    """``(8, n_mc)`` integer matrix of TIF category counts per run."""
    corners = cfg.corners.corners
    corners[0] = max(0.0, 1.0 - corners[1:].sum())
    out = np.empty((8, cfg.n_mc), dtype=np.int64)
    start = 0
    for j, size in enumerate(chunked_sizes(cfg.n_mc, cfg.chunk)):
        rng = substream(cfg.seed, j)
        c = rng.multinomial(cfg.n_p, corners, size=size).T  # (4, size) over (I, F) corners
        if cfg.fluctuate_test_count:
            t = rng.binomial(c, cfg.mean_t)
        else:
            # uniform subset of n_t people: sequential hypergeometric over the corners
            t = np.zeros_like(c)
            remaining = np.full(size, cfg.n_t, dtype=np.int64)
            pool = c.sum(axis=0)
            for i in range(3):
                pool = pool - c[i]
                good, bad = c[i], pool
                draw = np.zeros(size, dtype=np.int64)
                ok = remaining > 0
                if np.any(ok):
                    draw[ok] = rng.hypergeometric(good[ok], bad[ok], remaining[ok])
                t[i] = draw
                remaining = remaining - draw
            t[3] = remaining
        sl = slice(start, start + size)
        out[0:4, sl] = c - t  # untested: 000, 001, 010, 011
        out[4:8, sl] = t      # tested:   100, 101, 110, 111
        start += size
    return out


def nearest_rank_quantile(x: np.ndarray, q) -> np.ndarray:
    """Nearest-rank empirical quantile (smallest value with ECDF >= q)."""
    return np.quantile(x, q, method="inverted_cdf", axis=-1)


@dataclass
class CategoryStats:
    """Category count summaries and the two IFR distributions."""

    matrix: np.ndarray
    n_t_nominal: int
    means: np.ndarray = field(init=False)
    q68: np.ndarray = field(init=False)
    q95: np.ndarray = field(init=False)
    ifr_full: np.ndarray = field(init=False)
    ifr_extrapolated: np.ndarray = field(init=False)
    excluded_full: int = field(init=False)
    excluded_extrapolated: int = field(init=False)

    def __post_init__(self):
        m = self.matrix
        self.means = m.mean(axis=1)
        self.q68 = nearest_rank_quantile(m, Q68).T
        self.q95 = nearest_rank_quantile(m, Q95).T
        n_p = m.sum(axis=0)
        infected = m[2] + m[3] + m[6] + m[7]
        fatal_inf = m[3] + m[7]
        fatal = m[1] + m[3] + m[5] + m[7]
        tested = m[4:8].sum(axis=0)
        pos_tested = m[6] + m[7]
        ok_full = infected > 0
        ok_ext = (pos_tested > 0) & (tested > 0)
        self.excluded_full = int((~ok_full).sum())
        self.excluded_extrapolated = int((~ok_ext).sum())
        self.ifr_full = fatal_inf[ok_full] / infected[ok_full]
        self.ifr_extrapolated = (fatal[ok_ext] / n_p[ok_ext]) / (pos_tested[ok_ext] / tested[ok_ext])

    @property
    def n_mc(self) -> int:
        return self.matrix.shape[1]

    def mc_standard_errors(self) -> np.ndarray:
        return self.matrix.std(axis=1, ddof=1) / np.sqrt(self.n_mc)

    def table_rows(self) -> list[dict]:
        rows = []
        for i, lab in enumerate(CATEGORY_LABELS):
            rows.append({
                "category": lab,
                "mean": float(self.means[i]),
                "q68_lo": float(self.q68[i, 0]), "q68_hi": float(self.q68[i, 1]),
                "q95_lo": float(self.q95[i, 0]), "q95_hi": float(self.q95[i, 1]),
            })
        return rows

    def matrix_to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(CATEGORY_LABELS)
            w.writerows(self.matrix.T.tolist())


def category_stats(matrix: np.ndarray, n_t_nominal: int = 0) -> CategoryStats:
    return CategoryStats(np.asarray(matrix), n_t_nominal)


def run_population_sim(cfg: PopulationSimConfig) -> CategoryStats:
    return category_stats(simulate_category_matrix(cfg), cfg.n_t)


def apply_test_errors(matrix: np.ndarray, sensitivity: float, specificity: float, seed: int = 0) -> np.ndarray:
    """Observed positive test counts per run after imperfect testing.

    Infected tested people test positive with probability ``sensitivity``;
    non-infected tested people with probability ``1 - specificity``.
    """
    if not (0.0 <= sensitivity <= 1.0 and 0.0 <= specificity <= 1.0):
        raise ValueError("sensitivity and specificity must lie in [0, 1]")
    rng = substream(seed, 0)
    inf_tested = matrix[6] + matrix[7]
    clean_tested = matrix[4] + matrix[5]
    return rng.binomial(inf_tested, sensitivity) + rng.binomial(clean_tested, 1.0 - specificity)
