"""Beta-binomial posteriors for a ratio of proportions.

The ratio density is obtained by a change of variables ``p1 = r y``,
``p2 = y`` in the product of the two Beta posteriors and a numeric integral
over ``y``.  Uncertain multiplicative scales on the two counts (fatality
undercount, test-error renormalization) are folded in by mixing over
Gauss-Legendre nodes of their priors.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np
from scipy import special, stats

from .intervals import CountPair, IntervalEstimate, z_value
from .ratio import RatioCounts

__all__ = [
    "BetaParams",
    "JEFFREYS",
    "FLAT",
    "HALDANE",
    "GridDensity",
    "GridCoverageError",
    "ScalePrior",
    "TruncationWarning",
    "GridSpec",
    "beta_posterior",
    "ratio_posterior",
    "ratio_posterior_closed_form",
    "dressed_ratio_posterior",
    "credible_interval",
    "default_ratio_grid",
]

EPSILON = 1e-6


@dataclass(frozen=True)
class BetaParams:
    alpha: float
    beta: float

    def __post_init__(self):
        # (0, 0) is the improper Haldane limit; usable as a prior only
        if self.alpha < 0 or self.beta < 0 or (self.alpha == 0) != (self.beta == 0):
            raise ValueError(f"invalid Beta parameters ({self.alpha}, {self.beta})")

    @property
    def is_proper(self) -> bool:
        return self.alpha > 0 and self.beta > 0

    @property
    def mean(self) -> float:
        return self.alpha / (self.alpha + self.beta)


JEFFREYS = BetaParams(0.5, 0.5)
FLAT = BetaParams(1.0, 1.0)
HALDANE = BetaParams(0.0, 0.0)


def beta_posterior(c: CountPair, prior: BetaParams = JEFFREYS) -> BetaParams:
    """Conjugate update ``(k + alpha, n - k + beta)``."""
    return BetaParams(c.k + prior.alpha, c.n - c.k + prior.beta)


class GridCoverageError(ValueError):
    """The support grid cuts off a non-negligible part of the density."""

    def __init__(self, msg: str, suggested: tuple[float, float]):
        super().__init__(f"{msg}; try bounds {suggested[0]:.4g}..{suggested[1]:.4g}")
        self.suggested = suggested


class TruncationWarning(UserWarning):
    """A scale prior loses more than 1% of its mass below the truncation point."""


@dataclass
class GridDensity:
    """Density values on a strictly increasing grid."""

    grid: np.ndarray
    mass: np.ndarray
    normalized: bool = False

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=float)
        self.mass = np.asarray(self.mass, dtype=float)
        if self.grid.ndim != 1 or self.grid.shape != self.mass.shape or self.grid.size < 2:
            raise ValueError("grid and mass must be 1-D arrays of equal length >= 2")
        if np.any(np.diff(self.grid) <= 0):
            raise ValueError("grid must be strictly increasing")
        if np.any(self.mass < 0) or not np.all(np.isfinite(self.mass)):
            raise ValueError("density values must be finite and non-negative")

    def integral(self) -> float:
        return float(np.trapezoid(self.mass, self.grid))

    def normalize(self) -> "GridDensity":
        z = self.integral()
        if z <= 0:
            raise ValueError("density has zero mass")
        return GridDensity(self.grid, self.mass / z, True)

    def cdf(self) -> np.ndarray:
        steps = 0.5 * (self.mass[1:] + self.mass[:-1]) * np.diff(self.grid)
        c = np.concatenate([[0.0], np.cumsum(steps)])
        return c / c[-1]

    def quantile(self, q):
        return np.interp(q, self.cdf(), self.grid)

    def mean(self) -> float:
        return float(np.trapezoid(self.grid * self.mass, self.grid) / self.integral())

    def std(self) -> float:
        m = self.mean()
        var = np.trapezoid((self.grid - m) ** 2 * self.mass, self.grid) / self.integral()
        return float(np.sqrt(var))

    def mode(self) -> float:
        return float(self.grid[int(np.argmax(self.mass))])

    def resample(self, grid: np.ndarray) -> "GridDensity":
        """Linear interpolation onto ``grid`` (zero outside the support)."""
        vals = np.interp(grid, self.grid, self.mass, left=0.0, right=0.0)
        return GridDensity(grid, vals).normalize()

    def tail_mass(self) -> tuple[float, float]:
        """Estimated mass beyond each grid edge.

        The density per unit ``ln r`` is extrapolated exponentially from the
        last grid cells; a non-decaying edge yields ``inf``.
        """
        u = np.log(self.grid) if self.grid[0] > 0 else self.grid
        g = self.mass * self.grid if self.grid[0] > 0 else self.mass
        total = np.trapezoid(g, u)
        out = []
        for sl, sign in ((slice(0, 8), 1.0), (slice(-8, None), -1.0)):
            uu, gg = u[sl], g[sl]
            if gg[0 if sign > 0 else -1] <= 0:
                out.append(0.0)
                continue
            with np.errstate(divide="ignore"):
                lg = np.log(np.maximum(gg, 1e-300))
            slope = sign * np.polyfit(uu, lg, 1)[0]  # decay rate toward the edge
            edge = gg[0] if sign > 0 else gg[-1]
            out.append(float(edge / slope / total) if slope > 0 else np.inf)
        return out[0], out[1]

    def check_tails(self, tol: float = 1e-5) -> None:
        """Raise :class:`GridCoverageError` if more than ``tol`` mass lies beyond an edge."""
        lo_m, hi_m = self.tail_mass()
        if lo_m > tol or hi_m > tol:
            a, b = self.grid[0], self.grid[-1]
            span = np.log(b / a) if a > 0 else 1.0
            sa = a * np.exp(-span) if lo_m > tol and a > 0 else a
            sb = b * np.exp(span) if hi_m > tol else b
            raise GridCoverageError(
                f"density not negligible at the grid edge (tail mass {lo_m:.2g}, {hi_m:.2g})", (sa, sb)
            )

    def to_csv(self, path, header: Sequence[str] = ("r", "density")) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for x, y in zip(self.grid, self.mass):
                w.writerow([f"{x:.17g}", f"{y:.17g}"])

    @classmethod
    def from_csv(cls, path) -> "GridDensity":
        """Read a two-column (value, density) file with one header row."""
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        if data.shape[1] != 2:
            raise ValueError(f"{path}: expected two columns, got {data.shape[1]}")
        return cls(data[:, 0], data[:, 1]).normalize()


@dataclass(frozen=True)
class ScalePrior:
    """Prior on a multiplicative count scale with mean ``mu`` and spread ``sigma``.

    The gamma family is moment matched (shape ``mu^2/sigma^2``, rate
    ``mu/sigma^2``).
    """

    mu: float = 1.0
    sigma: float = 0.0
    family: str = "normal"

    def __post_init__(self):
        if self.mu <= 0:
            raise ValueError("mu must be positive")
        if self.sigma < 0:
            raise ValueError("sigma must be non-negative")
        if self.family not in ("normal", "gamma"):
            raise ValueError(f"family must be 'normal' or 'gamma', got {self.family!r}")

    @property
    def is_point(self) -> bool:
        return self.sigma == 0.0

    def _dist(self):
        if self.family == "normal":
            return stats.norm(self.mu, self.sigma)
        shape = (self.mu / self.sigma) ** 2
        return stats.gamma(shape, scale=self.sigma**2 / self.mu)

    def truncated_mass(self, eps: float = EPSILON) -> float:
        return 0.0 if self.is_point else float(self._dist().cdf(eps))

    def nodes(self, n_nodes: int = 64, eps: float = EPSILON) -> tuple[np.ndarray, np.ndarray]:
        """Quadrature nodes over ``mu +- 6 sigma`` truncated at ``eps``, weights summing to 1."""
        if self.is_point:
            return np.array([self.mu]), np.array([1.0])
        lost = self.truncated_mass(eps)
        if lost > 0.01:
            warnings.warn(
                f"scale prior N/Gamma(mu={self.mu}, sigma={self.sigma}) loses {lost:.1%} of its mass below {eps}",
                TruncationWarning,
                stacklevel=3,
            )
        x, w = np.polynomial.legendre.leggauss(n_nodes)
        a, b = max(eps, self.mu - 6 * self.sigma), self.mu + 6 * self.sigma
        g = 0.5 * (b - a) * x + 0.5 * (b + a)
        ww = 0.5 * (b - a) * w * self._dist().pdf(g)
        return g, ww / ww.sum()


@dataclass(frozen=True)
class GridSpec:
    """Ratio grid settings; bounds default to the Katz interval inflated x10."""

    points: int = 4096
    lower: float | None = None
    upper: float | None = None
    y_nodes: int = 512
    mix_nodes: int = 64

    def __post_init__(self):
        if self.points < 16 or self.y_nodes < 8 or self.mix_nodes < 2:
            raise ValueError("grid too coarse")
        if self.lower is not None and self.upper is not None and not 0 < self.lower < self.upper:
            raise ValueError("need 0 < lower < upper")


def default_ratio_grid(c: RatioCounts, spec: GridSpec = GridSpec(), inflate: float = 10.0) -> np.ndarray:
    """Logarithmic grid around the Katz 95% interval widened ``inflate`` times in log space."""
    k1, k2 = max(c.k1, 0.5), max(c.k2, 0.5)
    r = (k1 / c.n1) / (k2 / c.n2)
    half = inflate * z_value(0.95) * np.sqrt(1 / k1 + 1 / k2)
    lo = r * np.exp(-half)
    hi = r * np.exp(half)
    if c.k1 == 0:
        # density diverges at r = 0 for sub-unit shape; push far into the tail
        lo = hi * 1e-24
    if spec.lower is not None:
        lo = spec.lower
    if spec.upper is not None:
        hi = spec.upper
    return np.geomspace(lo, hi, spec.points)


def _beta_logpdf_on(logp, log1mp, a, b):
    return (a - 1.0) * logp + (b - 1.0) * log1mp - special.betaln(a, b)


def _mixed_beta_pdf(p, shapes_a, shapes_b, weights):
    """Weighted mixture of Beta pdfs evaluated on an array ``p`` (zero outside (0, 1))."""
    inside = (p > 0) & (p < 1)
    pc = np.where(inside, p, 0.5)
    logp, log1mp = np.log(pc), np.log1p(-pc)
    out = np.zeros_like(pc)
    for a, b, w in zip(shapes_a, shapes_b, weights):
        out += w * np.exp(_beta_logpdf_on(logp, log1mp, a, b))
    return np.where(inside, out, 0.0)


def _ratio_density(c, priors, grid, g_nodes, g_w, l_nodes, l_w, y_nodes):
    pr1, pr2 = priors
    a1 = g_nodes * c.k1 + pr1.alpha
    b1 = c.n1 - g_nodes * c.k1 + pr1.beta
    a2 = l_nodes * c.k2 + pr2.alpha
    b2 = c.n2 - l_nodes * c.k2 + pr2.beta
    if np.any(a1 <= 0) or np.any(b1 <= 0) or np.any(a2 <= 0) or np.any(b2 <= 0):
        raise ValueError("posterior Beta parameters must be positive (improper prior with boundary counts?)")

    # y integration range: union of the p2 posterior supports at 1e-13 tails
    ylo = float(stats.beta.ppf(1e-13, a2.min(), b2.max()))
    yhi = float(stats.beta.isf(1e-13, a2.max(), b2.min()))
    x, w = np.polynomial.legendre.leggauss(y_nodes)
    y = 0.5 * (yhi - ylo) * x + 0.5 * (yhi + ylo)
    wy = 0.5 * (yhi - ylo) * w

    f2 = _mixed_beta_pdf(y, a2, b2, l_w)
    f1 = _mixed_beta_pdf(grid[:, None] * y[None, :], a1, b1, g_w)
    return f1 @ (y * f2 * wy)


def _build(c, priors, grid_spec, g_mix, l_mix, check, max_extend: int = 4) -> GridDensity:
    """Evaluate on the default grid, widening it when the tails are cut."""
    spec = grid_spec
    for attempt in range(max_extend + 1):
        grid = default_ratio_grid(c, spec)
        dens = _ratio_density(c, priors, grid, g_mix[0], g_mix[1], l_mix[0], l_mix[1], spec.y_nodes)
        d = GridDensity(grid, dens).normalize()
        if not check:
            return d
        try:
            d.check_tails()
            return d
        except GridCoverageError as err:
            if attempt == max_extend or grid_spec.lower is not None or grid_spec.upper is not None:
                raise
            spec = replace(spec, lower=err.suggested[0], upper=err.suggested[1])
    raise AssertionError("unreachable")


def ratio_posterior(
    c: RatioCounts,
    priors: tuple[BetaParams, BetaParams] = (JEFFREYS, JEFFREYS),
    grid_spec: GridSpec = GridSpec(),
    check: bool = True,
) -> GridDensity:
    """Posterior density of ``r = p1 / p2`` on a logarithmic grid."""
    one = np.array([1.0])
    return _build(c, priors, grid_spec, (one, one), (one, one), check)


def ratio_posterior_closed_form(
    c: RatioCounts, priors: tuple[BetaParams, BetaParams], r: np.ndarray
) -> np.ndarray:
    """Closed-form ratio density via the regularized Gauss hypergeometric function.

    Valid for ``0 < r < 1`` only; kept as an independent cross-check of the
    numeric integral for small counts (large counts overflow the series).
    """
    r = np.asarray(r, dtype=float)
    if np.any((r <= 0) | (r >= 1)):
        raise ValueError("closed form is valid for 0 < r < 1")
    pr1, pr2 = priors
    a1, b1 = c.k1 + pr1.alpha, c.n1 - c.k1 + pr1.beta
    a2, b2 = c.k2 + pr2.alpha, c.n2 - c.k2 + pr2.beta
    big_a = a1 + a2
    cc = a1 + a2 + b2
    log_pref = (
        (a1 - 1.0) * np.log(r)
        + special.gammaln(big_a) + special.gammaln(b2)
        - special.betaln(a1, b1) - special.betaln(a2, b2)
        - special.gammaln(cc)
    )
    return np.exp(log_pref) * special.hyp2f1(big_a, 1.0 - b1, cc, r)


def dressed_ratio_posterior(
    c: RatioCounts,
    priors: tuple[BetaParams, BetaParams] = (JEFFREYS, JEFFREYS),
    gamma: ScalePrior = ScalePrior(),
    lam: ScalePrior = ScalePrior(),
    grid_spec: GridSpec = GridSpec(),
    eps: float = EPSILON,
    check: bool = True,
) -> GridDensity:
    """Ratio posterior averaged over uncertain count scales ``k1 -> gamma k1``, ``k2 -> lam k2``.

    The mixture factorizes: the ``p1`` posterior is mixed over ``gamma`` and
    the ``p2`` posterior over ``lam`` before the ``y`` integral.
    """
    g_mix = gamma.nodes(grid_spec.mix_nodes, eps)
    l_mix = lam.nodes(grid_spec.mix_nodes, eps)
    return _build(c, priors, grid_spec, g_mix, l_mix, check)


def credible_interval(d: GridDensity, level: float = 0.95) -> IntervalEstimate:
    """Equal-tailed credible interval; ``point`` is the posterior mean, mode in ``info``."""
    if not 0.0 < level < 1.0:
        raise ValueError(f"level must lie in (0, 1), got {level}")
    half = (1.0 - level) / 2.0
    lo, hi = d.quantile([half, 1.0 - half])
    mean, mode = d.mean(), d.mode()
    return IntervalEstimate(
        float(lo), float(hi), level, float(min(max(mean, lo), hi)), "credible-equal-tail",
        frozenset(), {"mode": mode, "mean": mean, "median": float(d.quantile(0.5))},
    )
