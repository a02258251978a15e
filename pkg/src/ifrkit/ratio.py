"""Confidence intervals for the ratio of two independent binomial proportions.

The numerator proportion is deaths over population, the denominator positives
over tests, so the ratio is the infection fatality rate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import special, stats

from ._rng import chunked_sizes, substream
from .intervals import (
    CountPair,
    IntervalEstimate,
    _bisect,
    clopper_pearson_interval,
    midp_interval,
    z_value,
)

__all__ = [
    "RatioCounts",
    "BootstrapConfig",
    "conditional_ratio_interval",
    "katz_log_interval",
    "asinh_ratio_interval",
    "bootstrap_ratio_interval",
    "bootstrap_replicates",
    "jackknife_acceleration",
    "profile_nuisance_root",
    "profile_llr",
    "profile_llr_interval",
]


@dataclass(frozen=True)
class RatioCounts:
    """Four counts of the double ratio ``(k1/n1) / (k2/n2)``."""

    k1: int
    n1: int
    k2: int
    n2: int

    def __post_init__(self):
        for name in ("k1", "n1", "k2", "n2"):
            v = getattr(self, name)
            if int(v) != v:
                raise ValueError(f"{name} must be an integer, got {v}")
        if self.n1 < 1 or self.n2 < 1:
            raise ValueError("n1 and n2 must be >= 1")
        if not 0 <= self.k1 <= self.n1:
            raise ValueError(f"need 0 <= k1 <= n1, got {self.k1}/{self.n1}")
        if not 0 <= self.k2 <= self.n2:
            raise ValueError(f"need 0 <= k2 <= n2, got {self.k2}/{self.n2}")

    @property
    def p1(self) -> float:
        return self.k1 / self.n1

    @property
    def p2(self) -> float:
        return self.k2 / self.n2

    @property
    def rhat(self) -> float:
        return self.p1 / self.p2 if self.k2 > 0 else np.inf

    def scaled(self, m: int) -> "RatioCounts":
        return RatioCounts(self.k1 * m, self.n1 * m, self.k2 * m, self.n2 * m)


@dataclass(frozen=True)
class BootstrapConfig:
    """Parametric bootstrap settings.

    Replicates are drawn in fixed-size chunks; chunk ``j`` uses the substream
    ``(seed, j)`` so the result does not depend on execution order.
    """

    replicates: int = 1_000_000
    variant: str = "prc"
    seed: int = 0
    chunk: int = 1 << 18

    def __post_init__(self):
        if self.variant not in ("prc", "bc", "bca"):
            raise ValueError(f"variant must be prc, bc or bca, got {self.variant!r}")
        if self.replicates < 1000:
            raise ValueError(f"need at least 1000 replicates, got {self.replicates}")
        if self.chunk < 1:
            raise ValueError("chunk must be positive")


def _to_ratio(c: RatioCounts, u: float) -> float:
    """Map a conditional binomial parameter to the ratio scale."""
    if u >= 1.0:
        return np.inf
    return (c.n2 / c.n1) * u / (1.0 - u)


def conditional_ratio_interval(c: RatioCounts, level: float = 0.95, base: str = "cp") -> IntervalEstimate:
    """Interval from the distribution of ``k1`` conditional on ``k1 + k2``."""
    if c.k1 + c.k2 < 1:
        raise ValueError("conditional interval needs k1 + k2 >= 1")
    single = CountPair(c.k1, c.k1 + c.k2)
    if base == "cp":
        inner = clopper_pearson_interval(single, level)
    elif base == "midp":
        inner = midp_interval(single, level)
    else:
        raise ValueError(f"base must be 'cp' or 'midp', got {base!r}")
    lo, hi = _to_ratio(c, inner.lower), _to_ratio(c, inner.upper)
    flags = frozenset({"upper-unbounded"}) if np.isinf(hi) else frozenset()
    point = min(max(c.rhat, lo), hi)
    return IntervalEstimate(lo, hi, level, point, f"conditional-{base}", flags)


def _log_se(c: RatioCounts, continuity: bool) -> tuple[float, float]:
    k1, k2 = float(c.k1), float(c.k2)
    if k1 == 0 or k2 == 0:
        if not continuity:
            raise ValueError("log-scale intervals need k1 >= 1 and k2 >= 1 (or continuity=True)")
        k1 = k1 or 0.5
        k2 = k2 or 0.5
    r = (k1 / c.n1) / (k2 / c.n2)
    se = np.sqrt(1.0 / k1 - 1.0 / c.n1 + 1.0 / k2 - 1.0 / c.n2)
    return r, float(se)


def katz_log_interval(c: RatioCounts, level: float = 0.95, continuity: bool = False) -> IntervalEstimate:
    """Katz interval, symmetric around the log ratio."""
    r, se = _log_se(c, continuity)
    half = z_value(level) * se
    return IntervalEstimate(r * np.exp(-half), r * np.exp(half), level, r, "katz-log")


def asinh_ratio_interval(c: RatioCounts, level: float = 0.95, continuity: bool = False) -> IntervalEstimate:
    """Log-ratio interval with the half-width passed through ``2 asinh(z se / 2)``."""
    r, se = _log_se(c, continuity)
    half = 2.0 * np.arcsinh(0.5 * z_value(level) * se)
    return IntervalEstimate(r * np.exp(-half), r * np.exp(half), level, r, "asinh")


# ---------------------------------------------------------------------------
# bootstrap
# ---------------------------------------------------------------------------

def bootstrap_replicates(c: RatioCounts, cfg: BootstrapConfig) -> tuple[np.ndarray, int]:
    """Sorted ratio replicates and the number of discarded ``k2* = 0`` draws."""
    p1, p2 = c.p1, c.p2
    kept, dropped = [], 0
    for j, size in enumerate(chunked_sizes(cfg.replicates, cfg.chunk)):
        rng = substream(cfg.seed, j)
        a1 = rng.binomial(c.n1, p1, size)
        a2 = rng.binomial(c.n2, p2, size)
        ok = a2 > 0
        dropped += int(size - ok.sum())
        kept.append((a1[ok] / c.n1) / (a2[ok] / c.n2))
    theta = np.sort(np.concatenate(kept))
    return theta, dropped


def jackknife_acceleration(c: RatioCounts) -> float:
    """Acceleration constant from leave-one-out over the Bernoulli data points.

    The ``n1 + n2`` observations take only four distinct leave-one-out values
    (drop a death, a survivor, a positive or a negative), each weighted by its
    multiplicity.  With ``k2 = 1`` the drop-a-positive value is undefined and
    left out.
    """
    k1, n1, k2, n2 = c.k1, c.n1, c.k2, c.n2
    if n1 < 2 or n2 < 2:
        raise ValueError("jackknife needs n1, n2 >= 2")
    p1, p2 = k1 / n1, k2 / n2
    vals = np.array([
        ((k1 - 1) / (n1 - 1)) / p2,
        (k1 / (n1 - 1)) / p2,
        p1 / ((k2 - 1) / (n2 - 1)) if k2 > 1 else np.nan,
        p1 / (k2 / (n2 - 1)),
    ])
    mult = np.array([k1, n1 - k1, k2, n2 - k2], dtype=float)
    # leaving out the only positive gives an undefined ratio; skipped like k2* = 0 draws
    keep = (mult > 0) & np.isfinite(vals)
    vals, mult = vals[keep], mult[keep]
    mean = np.sum(mult * vals) / mult.sum()
    d = mean - vals
    den = np.sum(mult * d**2)
    if den == 0.0:
        return 0.0
    return float(np.sum(mult * d**3) / (6.0 * den**1.5))


def bootstrap_ratio_interval(
    c: RatioCounts,
    level: float = 0.95,
    cfg: BootstrapConfig | None = None,
    z0: float | None = None,
    accel: float | None = None,
) -> IntervalEstimate:
    """Percentile, bias-corrected or BCa bootstrap interval.

    ``z0`` and ``accel`` override the estimated bias and acceleration
    constants; with both zero every variant reduces to the percentile method.
    """
    cfg = cfg or BootstrapConfig()
    if c.k2 < 1:
        raise ValueError("bootstrap needs k2 >= 1")
    theta, dropped = bootstrap_replicates(c, cfg)
    if theta.size == 0:
        raise ValueError("all bootstrap replicates were degenerate (k2* = 0)")
    rhat = c.rhat
    half_alpha = (1.0 - level) / 2.0
    zq = special.ndtri(np.array([half_alpha, 1.0 - half_alpha]))

    z0_used, a_used = 0.0, 0.0
    if cfg.variant in ("bc", "bca"):
        frac = np.searchsorted(theta, rhat, side="right") / theta.size
        frac = min(max(frac, 1.0 / theta.size), 1.0 - 1.0 / theta.size)
        z0_used = float(special.ndtri(frac))
    if cfg.variant == "bca" and accel is None:
        a_used = jackknife_acceleration(c)
    if z0 is not None:
        z0_used = float(z0)
    if accel is not None:
        a_used = float(accel)

    shifted = z0_used + zq
    probs = special.ndtr(z0_used + shifted / (1.0 - a_used * shifted))
    lo, hi = np.quantile(theta, probs)
    flags = frozenset({"replicates-discarded"}) if dropped else frozenset()
    point = min(max(rhat, lo), hi)
    return IntervalEstimate(
        float(lo), float(hi), level, float(point), f"bootstrap-{cfg.variant}", flags,
        {"discarded": dropped, "z0": z0_used, "accel": a_used, "replicates": cfg.replicates},
    )


# ---------------------------------------------------------------------------
# profile likelihood
# ---------------------------------------------------------------------------

def profile_nuisance_root(c: RatioCounts, r0: float) -> float:
    """Maximizer of the joint likelihood in ``p1`` at fixed ratio ``r0`` (``p2 = p1 / r0``).

    The stationarity condition is a quadratic in ``p1``; the smaller root is the
    one inside ``(0, min(1, r0))``.
    """
    k1, n1, k2, n2 = c.k1, c.n1, c.k2, c.n2
    big = k1 + n2 + (k2 + n1) * r0
    disc = big * big - 4.0 * (n1 + n2) * (k1 + k2) * r0
    return float((big - np.sqrt(max(disc, 0.0))) / (2.0 * (n1 + n2)))


def _loglik(c: RatioCounts, p1: float, p2: float) -> float:
    return float(
        special.xlogy(c.k1, p1) + special.xlog1py(c.n1 - c.k1, -p1)
        + special.xlogy(c.k2, p2) + special.xlog1py(c.n2 - c.k2, -p2)
    )


def profile_llr(c: RatioCounts, r0: float) -> float:
    """``-2 ln`` of the profile likelihood ratio at ``r0``."""
    if r0 <= 0.0:
        return np.inf
    p1 = profile_nuisance_root(c, r0)
    best = _loglik(c, c.p1, c.p2)
    return max(0.0, -2.0 * (_loglik(c, p1, p1 / r0) - best))


def profile_llr_interval(c: RatioCounts, level: float = 0.95, tol: float = 1e-12) -> IntervalEstimate:
    """Profile likelihood ratio interval with the chi-square(1) threshold (``tol`` relative to r_hat)."""
    if c.k1 < 1 or c.k2 < 1 or c.k1 == c.n1 or c.k2 == c.n2:
        raise ValueError("profile interval needs interior counts; use a Monte Carlo belt at the boundary")
    crit = float(stats.chi2.ppf(level, 1))
    rhat = c.rhat

    def g(r0):
        return profile_llr(c, r0) - crit

    lo_b = rhat
    while g(lo_b) <= 0.0:
        lo_b *= 0.5
    hi_b = rhat
    while g(hi_b) <= 0.0:
        hi_b *= 2.0
    lo = _bisect(g, lo_b, rhat, tol * rhat)
    hi = _bisect(g, rhat, hi_b, tol * rhat)
    return IntervalEstimate(lo, hi, level, rhat, "profile-llr")
