"""Combination of ratio estimates from independent studies.

Two families: random-effects summaries of point estimates (method of moments,
normal likelihood) and operations on full posterior densities (quantile
averaging barycenter, mixture, normalized product).  The joint likelihood
ratio combines raw counts directly.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import optimize, stats

from .bayes import GridDensity, credible_interval
from .intervals import IntervalEstimate, _bisect, z_value
from .ratio import RatioCounts, profile_llr, profile_llr_interval

__all__ = [
    "ProductUnderflowError",
    "StudyEstimate",
    "RandomEffectsFit",
    "FusedDensity",
    "CompatibilityWarning",
    "estimates_from_densities",
    "mom_combine",
    "nl_fit",
    "common_grid",
    "ot_barycenter",
    "mean_of_posteriors",
    "product_of_posteriors",
    "joint_llr_combine",
    "JointLLRResult",
    "summary_row",
]


class CompatibilityWarning(UserWarning):
    """Inputs look mutually incompatible (disjoint intervals, sole study, ...)."""


class ProductUnderflowError(ValueError, ArithmeticError):
    """The product of the input densities vanishes on the whole grid."""


@dataclass(frozen=True)
class StudyEstimate:
    r: float
    s: float
    w: float = 1.0
    name: str = ""

    def __post_init__(self):
        if not self.s > 0:
            raise ValueError(f"standard error must be positive, got {self.s}")
        if not np.isfinite(self.w) or self.w < 0:
            raise ValueError("weight must be finite and non-negative")


def estimates_from_densities(
    densities: Sequence[GridDensity], spread: str = "sd", names: Sequence[str] | None = None
) -> list[StudyEstimate]:
    """Posterior mean with either the posterior SD or half the 68% credible width."""
    out = []
    for i, d in enumerate(densities):
        if spread == "sd":
            s = d.std()
        elif spread == "cr68":
            ci = credible_interval(d, 0.6827)
            s = 0.5 * ci.width
        else:
            raise ValueError("spread must be 'sd' or 'cr68'")
        out.append(StudyEstimate(d.mean(), s, 1.0, names[i] if names else ""))
    return out


def _arrays(estimates):
    r = np.array([e.r for e in estimates], dtype=float)
    s2 = np.array([e.s for e in estimates], dtype=float) ** 2
    return r, s2


def _marginal_loglik(r_vals, s2, r, d2):
    v = s2 + d2
    return float(-0.5 * np.sum(np.log(2 * np.pi * v)) - 0.5 * np.sum((r_vals - r) ** 2 / v))


@dataclass
class RandomEffectsFit:
    r_hat: float
    delta_sq: float
    se_r: float
    method: str
    r_vals: np.ndarray = field(repr=False)
    s2: np.ndarray = field(repr=False)
    iterations: int = 0

    def loglik(self, r: float, d2: float) -> float:
        """Marginal normal log-likelihood ``sum ln N(r_j | r, s_j^2 + d2)``."""
        return _marginal_loglik(self.r_vals, self.s2, r, d2)

    def wald_interval(self, level: float = 0.95) -> IntervalEstimate:
        """Gaussian interval ``r_hat +- z se``."""
        z = z_value(level)
        return IntervalEstimate(self.r_hat - z * self.se_r, self.r_hat + z * self.se_r, level, self.r_hat,
                                f"{self.method}-gaussian")

    def _profile_r(self, r: float) -> float:
        res = optimize.minimize_scalar(lambda u: -self.loglik(r, u * u), bounds=(0.0, 10 * np.sqrt(self.s2.max() + np.ptp(self.r_vals) ** 2) + 1e-12),
                                       method="bounded", options={"xatol": 1e-14})
        return -float(res.fun)

    def _profile_d2(self, d2: float) -> float:
        w = 1.0 / (self.s2 + d2)
        r = np.sum(w * self.r_vals) / w.sum()  # exact conditional maximizer
        return self.loglik(r, d2)

    def profile_interval(self, level: float = 0.95, parameter: str = "r") -> IntervalEstimate:
        """1-D profile likelihood interval against chi-square(1)."""
        crit = 0.5 * float(stats.chi2.ppf(level, 1))
        top = self.loglik(self.r_hat, self.delta_sq)
        if parameter == "r":
            f = lambda r: top - self._profile_r(r) - crit
            step = max(self.se_r, 1e-12)
            lo_b, hi_b = self.r_hat - step, self.r_hat + step
            while f(lo_b) < 0:
                lo_b -= step
                step *= 2
            step = max(self.se_r, 1e-12)
            while f(hi_b) < 0:
                hi_b += step
                step *= 2
            lo = _bisect(f, lo_b, self.r_hat, 1e-14)
            hi = _bisect(f, self.r_hat, hi_b, 1e-14)
            return IntervalEstimate(lo, hi, level, self.r_hat, f"{self.method}-profile-r")
        if parameter == "delta_sq":
            f = lambda d2: top - self._profile_d2(d2) - crit
            lo = 0.0 if f(0.0) <= 0 else _bisect(f, 0.0, self.delta_sq, 1e-16)
            hi_b = max(self.delta_sq, self.s2.mean()) * 2 + 1e-12
            while f(hi_b) < 0:
                hi_b *= 2
            hi = _bisect(f, self.delta_sq, hi_b, 1e-16)
            return IntervalEstimate(lo, hi, level, self.delta_sq, f"{self.method}-profile-delta2")
        raise ValueError("parameter must be 'r' or 'delta_sq'")

    def loglik_grid(self, r_grid: np.ndarray, d2_grid: np.ndarray) -> np.ndarray:
        """``2 (ln L_max - ln L)`` on a grid; compare with chi-square(2) quantiles for joint regions."""
        top = self.loglik(self.r_hat, self.delta_sq)
        return np.array([[2.0 * (top - self.loglik(r, d)) for d in d2_grid] for r in r_grid])


def _dl_delta(r, s2, w):
    rh = np.sum(w * r) / w.sum()
    q = np.sum(w * (r - rh) ** 2)
    num = q - np.sum(w * s2) + np.sum(w**2 * s2) / w.sum()
    den = w.sum() - np.sum(w**2) / w.sum()
    return max(0.0, num / den) if den > 0 else 0.0


def mom_combine(estimates: Sequence[StudyEstimate], tol: float = 1e-12, max_iter: int = 1000) -> RandomEffectsFit:
    """Iterated DerSimonian-Laird method of moments."""
    r, s2 = _arrays(estimates)
    if r.size == 0:
        raise ValueError("need at least one study")
    if r.size == 1:
        warnings.warn("single study: passthrough with zero heterogeneity", CompatibilityWarning, stacklevel=2)
        return RandomEffectsFit(float(r[0]), 0.0, float(np.sqrt(s2[0])), "mom", r, s2, 0)
    d2 = 0.0
    it = 0
    for it in range(1, max_iter + 1):
        w = 1.0 / (s2 + d2)
        new = _dl_delta(r, s2, w)
        done = abs(new - d2) < tol
        d2 = new
        if done:
            break
    w = 1.0 / (s2 + d2)
    rh = float(np.sum(w * r) / w.sum())
    return RandomEffectsFit(rh, d2, float(w.sum() ** -0.5), "mom", r, s2, it)


def nl_fit(estimates: Sequence[StudyEstimate], tol: float = 1e-18, max_iter: int = 10_000) -> RandomEffectsFit:
    """Maximum likelihood of the normal-normal random effects model by fixed-point iteration."""
    r, s2 = _arrays(estimates)
    if r.size < 2:
        raise ValueError("normal likelihood fit needs at least two studies")
    d2 = max(np.var(r) - s2.mean(), 0.0) + 1e-3 * s2.mean()
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        w = 1.0 / (s2 + d2)
        rh = np.sum(w * r) / w.sum()
        new = max(0.0, np.sum(((r - rh) ** 2 - s2) * w**2) / np.sum(w**2))
        if abs(new - d2) < tol + 1e-10 * d2:
            d2 = new
            converged = True
            break
        d2 = new
    if not converged:
        res = optimize.minimize(
            lambda p: -_marginal_loglik(r, s2, p[0], p[1] ** 2),
            x0=[np.mean(r), np.sqrt(max(np.var(r), 1e-12))], method="Nelder-Mead",
            options={"xatol": 1e-14, "fatol": 1e-14, "maxiter": 20000},
        )
        if not res.success:
            raise RuntimeError("normal likelihood fit did not converge")
        d2 = float(res.x[1] ** 2)
    w = 1.0 / (s2 + d2)
    rh = float(np.sum(w * r) / w.sum())
    return RandomEffectsFit(rh, float(d2), float(w.sum() ** -0.5), "nl", r, s2, it)


# ---------------------------------------------------------------------------
# density operations
# ---------------------------------------------------------------------------

@dataclass
class FusedDensity:
    density: GridDensity
    method: str
    weights: np.ndarray

    def interval(self, level: float = 0.95) -> IntervalEstimate:
        return credible_interval(self.density, level)


def _norm_weights(k: int, weights) -> np.ndarray:
    w = np.ones(k) if weights is None else np.asarray(weights, dtype=float)
    if w.shape != (k,) or np.any(w < 0) or w.sum() <= 0:
        raise ValueError("weights must be non-negative, one per density, not all zero")
    return w / w.sum()


def common_grid(densities: Sequence[GridDensity], points: int = 8192, tail: float = 1e-10) -> np.ndarray:
    """Logarithmic grid spanning the union of the inputs' effective supports."""
    lo = min(float(d.quantile(tail)) for d in densities)
    hi = max(float(d.quantile(1 - tail)) for d in densities)
    lo = max(lo, min(d.grid[0] for d in densities))
    if lo <= 0:
        return np.linspace(0.0, hi, points)
    return np.geomspace(lo, hi, points)


def ot_barycenter(densities: Sequence[GridDensity], weights=None, n_quantiles: int = 4096) -> FusedDensity:
    """Wasserstein barycenter in 1-D: weighted average of quantile functions."""
    w = _norm_weights(len(densities), weights)
    u = (np.arange(n_quantiles) + 0.5) / n_quantiles
    qbar = np.zeros(n_quantiles)
    for wi, d in zip(w, densities):
        q = d.quantile(u)
        if q[-1] - q[0] <= 1e-12 * np.abs(q).max():
            raise ValueError("degenerate (point mass) input density")
        qbar += wi * q
    # density = du / dQ at interval midpoints
    dq = np.diff(qbar)
    keep = dq > 0
    x = 0.5 * (qbar[1:] + qbar[:-1])[keep]
    f = (np.diff(u)[keep]) / dq[keep]
    dens = GridDensity(x, f).normalize()
    return FusedDensity(dens, "ot", w)


def mean_of_posteriors(densities: Sequence[GridDensity], weights=None, grid: np.ndarray | None = None) -> FusedDensity:
    w = _norm_weights(len(densities), weights)
    grid = common_grid(densities) if grid is None else grid
    total = np.zeros_like(grid)
    for wi, d in zip(w, densities):
        total += wi * d.resample(grid).mass
    return FusedDensity(GridDensity(grid, total).normalize(), "sum", w)


def _overlap(a: GridDensity, b: GridDensity, grid: np.ndarray) -> float:
    return float(np.trapezoid(np.sqrt(a.resample(grid).mass * b.resample(grid).mass), grid))


def product_of_posteriors(densities: Sequence[GridDensity], weights=None, grid: np.ndarray | None = None,
                          floor: float = 1e-300) -> FusedDensity:
    """Normalized weighted geometric product; unit weights by default."""
    k = len(densities)
    w = np.ones(k) if weights is None else np.asarray(weights, dtype=float)
    grid = common_grid(densities) if grid is None else grid
    logs = np.zeros_like(grid)
    for wi, d in zip(w, densities):
        logs += wi * np.log(np.maximum(d.resample(grid).mass, floor))
    top = logs.max()
    # some factor sits at the floor everywhere: Z would underflow
    if top < 0.5 * np.log(floor) or not np.isfinite(top):
        pairs = [(i, j) for i in range(k) for j in range(i + 1, k)]
        worst = min(pairs, key=lambda p: _overlap(densities[p[0]], densities[p[1]], grid))
        raise ProductUnderflowError(f"product of densities underflows; most incompatible pair {worst}")
    vals = np.exp(logs - top)
    return FusedDensity(GridDensity(grid, vals).normalize(), "prod", w)


# ---------------------------------------------------------------------------
# joint likelihood ratio
# ---------------------------------------------------------------------------

@dataclass
class JointLLRResult:
    r_hat: float
    interval: IntervalEstimate
    curve: Callable[[float], float]

    def interval_at(self, level: float) -> IntervalEstimate:
        """Likelihood-ratio interval at another confidence level."""
        return _llr_cut(self.curve, self.r_hat, level)


def _llr_cut(curve, r_hat: float, level: float) -> IntervalEstimate:
    crit = float(stats.chi2.ppf(level, 1))
    g = lambda r0: curve(r0) - crit
    lo_b = r_hat
    while g(lo_b) <= 0:
        lo_b *= 0.5
    hi_b = r_hat
    while g(hi_b) <= 0:
        hi_b *= 2.0
    lo = _bisect(g, lo_b, r_hat, 1e-12 * r_hat)
    hi = _bisect(g, r_hat, hi_b, 1e-12 * r_hat)
    return IntervalEstimate(lo, hi, level, r_hat, "joint-llr")


def joint_llr_combine(datasets: Sequence[RatioCounts], level: float = 0.95) -> JointLLRResult:
    """Sum of per-dataset profile LLR curves, minimized over the common ratio."""
    if not datasets:
        raise ValueError("need at least one dataset")
    singles = [profile_llr_interval(c, level) for c in datasets]
    if len(singles) > 1 and max(s.lower for s in singles) > min(s.upper for s in singles):
        warnings.warn("single-dataset intervals do not overlap", CompatibilityWarning, stacklevel=2)

    def total(r0: float) -> float:
        return float(sum(profile_llr(c, r0) for c in datasets))

    rhats = [c.rhat for c in datasets]
    a, b = np.log(min(rhats)), np.log(max(rhats))
    if b - a < 1e-12:
        r_hat = float(np.exp(a))
    else:
        res = optimize.minimize_scalar(lambda x: total(np.exp(x)), bounds=(a, b), method="bounded",
                                       options={"xatol": 1e-12})
        r_hat = float(np.exp(res.x))
    m = total(r_hat)

    def curve(r0: float) -> float:
        return total(r0) - m

    return JointLLRResult(r_hat, _llr_cut(curve, r_hat, level), curve)


def summary_row(name: str, obj) -> dict:
    """Table layout: mode, mean, Q68, Q95 (Gaussian for random-effects fits)."""
    if isinstance(obj, RandomEffectsFit):
        i68, i95 = obj.wald_interval(0.6827), obj.wald_interval(0.95)
        mode = mean = obj.r_hat
    elif isinstance(obj, FusedDensity):
        i68, i95 = obj.interval(0.6827), obj.interval(0.95)
        mode, mean = obj.density.mode(), obj.density.mean()
    elif isinstance(obj, JointLLRResult):
        i68 = obj.interval_at(0.6827)
        i95 = obj.interval_at(0.95)
        mode = mean = obj.r_hat
    else:
        raise TypeError(f"cannot summarize {type(obj).__name__}")
    return {"strategy": name, "mode": mode, "mean": mean,
            "q68_lo": i68.lower, "q68_hi": i68.upper, "q95_lo": i95.lower, "q95_hi": i95.upper}
