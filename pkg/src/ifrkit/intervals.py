"""Single binomial proportion confidence intervals and Neyman belts.

All estimators take a :class:`CountPair` and a confidence level ``1 - alpha``
and return an :class:`IntervalEstimate`.  Endpoints are probabilities; the Wald
interval is the only one allowed to leave ``[0, 1]``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np
from scipy import special, stats

from ._rng import substream

__all__ = [
    "CountPair",
    "IntervalEstimate",
    "ConfidenceBelt",
    "InconsistentBeltError",
    "z_value",
    "beta_quantile",
    "binomial_llr",
    "wald_interval",
    "wilson_interval",
    "clopper_pearson_interval",
    "midp_interval",
    "llr_interval_asymptotic",
    "build_neyman_belt",
    "invert_belt",
    "SINGLE_ESTIMATORS",
]

BELT_ORDERINGS = ("llr-exact", "llr-asymptotic", "central-pdf")


@dataclass(frozen=True)
class CountPair:
    """``k`` successes out of ``n`` trials."""

    k: int
    n: int

    def __post_init__(self):
        if int(self.n) != self.n or int(self.k) != self.k:
            raise ValueError(f"counts must be integers, got k={self.k}, n={self.n}")
        if self.n < 1:
            raise ValueError(f"n must be >= 1, got {self.n}")
        if not 0 <= self.k <= self.n:
            raise ValueError(f"need 0 <= k <= n, got k={self.k}, n={self.n}")

    @property
    def phat(self) -> float:
        return self.k / self.n


@dataclass(frozen=True)
class IntervalEstimate:
    """Interval endpoints plus the central value the method reports.

    ``flags`` carries method-specific conditions such as ``"unphysical"``
    (Wald endpoint outside [0, 1]), ``"non-contiguous"`` (belt inversion) or
    ``"upper-unbounded"``.  ``info`` holds auxiliary numbers (bootstrap
    discard counts, posterior mode, ...).
    """

    lower: float
    upper: float
    level: float
    point: float
    method: str
    flags: frozenset = frozenset()
    info: Mapping = field(default_factory=dict)

    def __post_init__(self):
        if not 0.0 < self.level < 1.0:
            raise ValueError(f"level must lie in (0, 1), got {self.level}")
        if self.lower > self.upper:
            raise ValueError(f"lower {self.lower} > upper {self.upper}")

    @property
    def width(self) -> float:
        return self.upper - self.lower

    def contains(self, x: float) -> bool:
        return self.lower <= x <= self.upper

    def scaled(self, factor: float) -> tuple[float, float, float]:
        """``(point, lower, upper)`` multiplied by ``factor`` (e.g. 100 for percent)."""
        return self.point * factor, self.lower * factor, self.upper * factor


class InconsistentBeltError(ValueError):
    """No parameter value on the belt grid accepts the observed count."""


def z_value(level: float) -> float:
    """Two-sided standard normal quantile ``z_{alpha/2}``."""
    if not 0.0 < level < 1.0:
        raise ValueError(f"level must lie in (0, 1), got {level}")
    return float(special.ndtri(1.0 - (1.0 - level) / 2.0))


def beta_quantile(q: float, a: float, b: float, tol: float = 1e-10) -> float:
    """Inverse of the regularized incomplete beta function by bisection."""
    if not 0.0 <= q <= 1.0:
        raise ValueError(f"quantile level must be in [0, 1], got {q}")
    if q == 0.0:
        return 0.0
    if q == 1.0:
        return 1.0
    lo, hi = 0.0, 1.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if special.betainc(a, b, mid) < q:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _xlogy_ratio(k, ratio):
    # k * log(ratio) with the 0 * log 0 = 0 convention
    k = np.asarray(k, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(k > 0, k * np.log(np.where(k > 0, ratio, 1.0)), 0.0)
    return out


def binomial_llr(k, n: int, p0):
    """``-2 ln L(p0)/L(k/n)`` for a binomial count, vectorized over ``k`` and ``p0``."""
    k = np.asarray(k, dtype=float)
    p0 = np.asarray(p0, dtype=float)
    phat = k / n
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = _xlogy_ratio(k, phat / p0)
        t2 = _xlogy_ratio(n - k, (1.0 - phat) / (1.0 - p0))
    out = 2.0 * (t1 + t2)
    return np.where(np.isnan(out), np.inf, out)


def wald_interval(c: CountPair, level: float = 0.95) -> IntervalEstimate:
    """Normal approximation interval, reported unclipped."""
    z = z_value(level)
    p = c.phat
    half = z * np.sqrt(p * (1.0 - p) / c.n)
    lo, hi = p - half, p + half
    flags = frozenset({"unphysical"}) if (lo < 0.0 or hi > 1.0) else frozenset()
    return IntervalEstimate(lo, hi, level, p, "wald", flags)


def wilson_interval(c: CountPair, level: float = 0.95) -> IntervalEstimate:
    """Wilson score interval; the reported point is the score-interval center."""
    z = z_value(level)
    n, p = c.n, c.phat
    denom = 1.0 + z * z / n
    center = (p + z * z / (2 * n)) / denom
    half = z * np.sqrt(p * (1.0 - p) / n + z * z / (4 * n * n)) / denom
    lo = 0.0 if c.k == 0 else max(0.0, center - half)
    hi = 1.0 if c.k == c.n else min(1.0, center + half)
    return IntervalEstimate(lo, hi, level, center, "wilson")


def clopper_pearson_interval(c: CountPair, level: float = 0.95) -> IntervalEstimate:
    alpha = 1.0 - level
    k, n = c.k, c.n
    if k == 0:
        lo, hi = 0.0, 1.0 - (alpha / 2.0) ** (1.0 / n)
    elif k == n:
        lo, hi = (alpha / 2.0) ** (1.0 / n), 1.0
    else:
        lo = beta_quantile(alpha / 2.0, k, n - k + 1)
        hi = beta_quantile(1.0 - alpha / 2.0, k + 1, n - k)
    return IntervalEstimate(lo, hi, level, c.phat, "clopper-pearson")


def _bisect(f: Callable[[float], float], lo: float, hi: float, tol: float = 1e-13) -> float:
    """Root of ``f`` on ``[lo, hi]``; requires a sign change."""
    flo = f(lo)
    if flo == 0.0:
        return lo
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        fm = f(mid)
        if fm == 0.0:
            return mid
        if (fm < 0.0) == (flo < 0.0):
            lo, flo = mid, fm
        else:
            hi = mid
        if hi - lo < tol:
            break
    return 0.5 * (lo + hi)


def midp_interval(c: CountPair, level: float = 0.95) -> IntervalEstimate:
    """Lancaster mid-P interval (half weight on the observed count)."""
    half_alpha = (1.0 - level) / 2.0
    k, n = c.k, c.n

    log_comb = special.gammaln(n + 1) - special.gammaln(k + 1) - special.gammaln(n - k + 1)

    def pmf(p):
        return np.exp(log_comb + special.xlogy(k, p) + special.xlog1py(n - k, -p))

    def upper_tail(p):  # 1/2 P(X=k) + P(X>k), increasing in p
        return 0.5 * pmf(p) + (special.betainc(k + 1, n - k, p) if k < n else 0.0) - half_alpha

    def lower_tail(p):  # 1/2 P(X=k) + P(X<k), decreasing in p
        return 0.5 * pmf(p) + (1.0 - special.betainc(k, n - k + 1, p) if k > 0 else 0.0) - half_alpha

    lo = 0.0 if k == 0 else _bisect(upper_tail, 0.0, c.phat)
    hi = 1.0 if k == n else _bisect(lower_tail, c.phat, 1.0)
    return IntervalEstimate(lo, hi, level, c.phat, "mid-p")


def llr_interval_asymptotic(c: CountPair, level: float = 0.95) -> IntervalEstimate:
    """Likelihood ratio interval with the chi-square(1) threshold."""
    crit = float(stats.chi2.ppf(level, 1))
    k, n, p = c.k, c.n, c.phat
    w = wilson_interval(c, level)
    # Wilson interval inflated x3 around the MLE always brackets the roots
    lo_b = max(0.0, p - 3.0 * (p - w.lower))
    hi_b = min(1.0, p + 3.0 * (w.upper - p))

    def g(x):
        return float(binomial_llr(k, n, x)) - crit

    if k == 0:
        lo = 0.0
    else:
        while lo_b > 0.0 and g(lo_b) <= 0.0:
            lo_b = max(0.0, p - 2.0 * (p - lo_b))
        lo = 0.0 if g(max(lo_b, 1e-300)) <= 0.0 else _bisect(g, max(lo_b, 1e-300), p)
    if k == n:
        hi = 1.0
    else:
        while hi_b < 1.0 and g(hi_b) <= 0.0:
            hi_b = min(1.0, p + 2.0 * (hi_b - p))
        hi = 1.0 if g(min(hi_b, 1.0 - 1e-16)) <= 0.0 else _bisect(g, p, min(hi_b, 1.0 - 1e-16))
    return IntervalEstimate(lo, hi, level, p, "llr-chi2")


SINGLE_ESTIMATORS: dict[str, Callable[[CountPair, float], IntervalEstimate]] = {
    "wald": wald_interval,
    "wilson": wilson_interval,
    "clopper-pearson": clopper_pearson_interval,
    "mid-p": midp_interval,
    "llr-chi2": llr_interval_asymptotic,
}


# ---------------------------------------------------------------------------
# Neyman belt
# ---------------------------------------------------------------------------

@dataclass
class ConfidenceBelt:
    """Per-parameter acceptance sets over observation counts ``0..n``.

    ``acceptance[i, k]`` is True when count ``k`` is accepted at
    ``param_grid[i]``.  ``thresholds[i]`` is the test statistic cut used at
    that grid point (NaN for the central-pdf ordering).
    """

    n: int
    level: float
    ordering: str
    param_grid: np.ndarray
    acceptance: np.ndarray
    thresholds: np.ndarray
    mc_samples: int
    seed: int

    def acceptance_set(self, i: int) -> np.ndarray:
        return np.flatnonzero(self.acceptance[i])

    def acceptance_probability(self) -> np.ndarray:
        """Exact binomial probability of each acceptance set."""
        ks = np.arange(self.n + 1)
        pmf = stats.binom.pmf(ks[None, :], self.n, self.param_grid[:, None])
        return (pmf * self.acceptance).sum(axis=1)


def _llr_cut_exact(counts: np.ndarray, tvals: np.ndarray, level: float) -> float:
    """Empirical ``level`` quantile of the statistic from per-k sample counts.

    Uses the smallest cut ``t_C`` with ``#{t <= t_C} >= level * total``; ties
    on the lattice move together.
    """
    order = np.argsort(tvals, kind="stable")
    t_sorted = tvals[order]
    cum = np.cumsum(counts[order])
    total = cum[-1]
    idx = int(np.searchsorted(cum, level * total - 1e-9 * total, side="left"))
    return float(t_sorted[min(idx, len(t_sorted) - 1)])


def build_neyman_belt(
    n: int,
    level: float = 0.95,
    ordering: str = "llr-exact",
    grid_size: int = 2000,
    mc_samples: int = 100_000,
    seed: int = 0,
    theta_range: tuple[float, float] = (0.0, 1.0),
) -> ConfidenceBelt:
    """Construct a confidence belt for ``Binom(n, theta)``.

    ``theta_range`` restricts the uniform parameter grid; narrowing it around
    the region of interest buys resolution without more grid points.
    """
    if ordering not in BELT_ORDERINGS:
        raise ValueError(f"unknown ordering {ordering!r}; choose from {BELT_ORDERINGS}")
    if grid_size < 100:
        raise ValueError(f"grid_size must be >= 100, got {grid_size}")
    if ordering == "llr-exact" and mc_samples < 10_000:
        raise ValueError(f"mc_samples must be >= 1e4 for llr-exact, got {mc_samples}")
    if n < 1:
        raise ValueError("n must be >= 1")
    a, b = theta_range
    if not 0.0 <= a < b <= 1.0:
        raise ValueError(f"theta_range must satisfy 0 <= a < b <= 1, got {theta_range}")

    grid = np.linspace(a, b, grid_size)
    ks = np.arange(n + 1)
    acc = np.zeros((grid_size, n + 1), dtype=bool)
    cuts = np.full(grid_size, np.nan)
    alpha = 1.0 - level
    chi2_cut = float(stats.chi2.ppf(level, 1))

    for i, theta in enumerate(grid):
        if ordering == "central-pdf":
            cdf = stats.binom.cdf(ks, n, theta)
            sf_incl = stats.binom.sf(ks - 1, n, theta)  # P(X >= k)
            acc[i] = (cdf >= alpha / 2.0) & (sf_incl >= alpha / 2.0)
            continue
        tvals = binomial_llr(ks, n, theta)
        if ordering == "llr-asymptotic":
            cut = chi2_cut
        else:
            draws = substream(seed, i).binomial(n, theta, size=mc_samples)
            counts = np.bincount(draws, minlength=n + 1)
            cut = _llr_cut_exact(counts, tvals, level)
        cuts[i] = cut
        acc[i] = tvals <= cut * (1.0 + 1e-12) + 1e-12

    return ConfidenceBelt(n, level, ordering, grid, acc, cuts, int(mc_samples), int(seed))


def invert_belt(belt: ConfidenceBelt, k: int) -> IntervalEstimate:
    """Union of grid parameters whose acceptance set holds ``k``."""
    if not 0 <= k <= belt.n:
        raise ValueError(f"k must lie in [0, {belt.n}], got {k}")
    idx = np.flatnonzero(belt.acceptance[:, k])
    if idx.size == 0:
        raise InconsistentBeltError(f"no grid point accepts k={k}")
    flags = frozenset() if idx[-1] - idx[0] + 1 == idx.size else frozenset({"non-contiguous"})
    lo, hi = float(belt.param_grid[idx[0]]), float(belt.param_grid[idx[-1]])
    point = min(max(k / belt.n, lo), hi)
    return IntervalEstimate(
        lo, hi, belt.level, point, f"belt-{belt.ordering}", flags,
        {"grid_step": float(belt.param_grid[1] - belt.param_grid[0])},
    )
