"""Delay kernels, convolution and regularized deconvolution of epidemic series.

Everything lives on a daily grid.  A kernel value ``pdf[j]`` is the
probability that the delay falls in the day bin centred on ``j``.  Series are
daily counts; cumulative quantities are formed by ``cumsum`` after the
convolution, which is equivalent to padding the daily counts with zeros.
"""

from __future__ import annotations

import datetime as _dt
import json
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy import linalg, optimize, special, stats

from ._rng import substream

__all__ = [
    "DelayKernel",
    "EpiSeries",
    "DeconvConfig",
    "DeconvolutionError",
    "PsiSurface",
    "OptimalDelay",
    "NoCrossingError",
    "WeibullSpec",
    "KernelSet",
    "DelayUncertainty",
    "weibull_from_moments",
    "weibull_kernel",
    "delta_kernel",
    "convolve_kernels",
    "convolve_series",
    "cumulative_response",
    "deconvolve",
    "oscillates",
    "choose_lambda",
    "psi",
    "psi_surface",
    "corrected_ifr",
    "solve_optimal_delay",
    "seroreversion_adjust",
    "window_mean",
    "propagate_delay_uncertainty",
    "normalize_by_tests",
]

LAMBDA_LADDER = tuple(np.geomspace(1e-3, 1e3, 25))


# ---------------------------------------------------------------------------
# kernels
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DelayKernel:
    """Discretized causal delay pdf on days ``0 .. len(pdf) - 1``."""

    pdf: np.ndarray
    label: str = ""
    scale: float = float("nan")
    shape: float = float("nan")

    def __post_init__(self):
        pdf = np.asarray(self.pdf, dtype=float)
        if pdf.ndim != 1 or pdf.size == 0:
            raise ValueError("kernel pdf must be a non-empty 1-D array")
        if np.any(pdf < 0):
            raise ValueError("kernel pdf must be non-negative")
        total = pdf.sum()
        if total <= 0:
            raise ValueError("kernel has zero mass")
        object.__setattr__(self, "pdf", pdf / total)

    @property
    def t_max(self) -> int:
        return self.pdf.size - 1

    @property
    def days(self) -> np.ndarray:
        return np.arange(self.pdf.size)

    def mean(self) -> float:
        return float(np.dot(self.days, self.pdf))

    def std(self) -> float:
        m = self.mean()
        return float(np.sqrt(np.dot((self.days - m) ** 2, self.pdf)))


def weibull_from_moments(mean: float, std: float) -> tuple[float, float]:
    """Weibull ``(scale, shape)`` with the given mean and standard deviation."""
    if mean <= 0 or std <= 0:
        raise ValueError("mean and std must be positive")
    cv2 = (std / mean) ** 2

    def gap(k):
        g1 = special.gamma(1.0 + 1.0 / k)
        return special.gamma(1.0 + 2.0 / k) / g1**2 - 1.0 - cv2

    shape = optimize.brentq(gap, 0.05, 200.0, xtol=1e-14)
    scale = mean / special.gamma(1.0 + 1.0 / shape)
    return float(scale), float(shape)


def weibull_kernel(scale: float, shape: float, t_max: int = 60, label: str = "") -> DelayKernel:
    """Weibull pdf integrated over day bins ``[j - 1/2, j + 1/2)`` (first bin starts at 0)."""
    if scale <= 0 or shape <= 0:
        raise ValueError("Weibull scale and shape must be positive")
    edges = np.concatenate([[0.0], np.arange(t_max + 1) + 0.5])
    cdf = stats.weibull_min.cdf(edges, shape, scale=scale)
    lost = 1.0 - cdf[-1]
    if lost > 1e-3:
        warnings.warn(
            f"kernel {label or '?'} truncated at t_max={t_max} loses {lost:.2%} of its mass",
            RuntimeWarning, stacklevel=2,
        )
    return DelayKernel(np.diff(cdf), label, scale, shape)


def delta_kernel(label: str = "delta") -> DelayKernel:
    return DelayKernel(np.array([1.0]), label)


def convolve_kernels(a: DelayKernel, b: DelayKernel) -> DelayKernel:
    label = f"{a.label}*{b.label}" if a.label and b.label else (a.label or b.label)
    return DelayKernel(np.convolve(a.pdf, b.pdf), label)


@dataclass(frozen=True)
class WeibullSpec:
    """One configured delay with relative 1-sigma parameter uncertainties."""

    label: str
    scale: float
    shape: float
    scale_unc_rel: float = 0.2
    shape_unc_rel: float = 0.2
    t_max: int = 60

    def kernel(self) -> DelayKernel:
        return weibull_kernel(self.scale, self.shape, self.t_max, self.label)

    def perturbed(self, rng: np.random.Generator, rel: float | None = None) -> "WeibullSpec":
        su = self.scale_unc_rel if rel is None else rel
        ku = self.shape_unc_rel if rel is None else rel
        # keep parameters physical; 20% Gaussians essentially never hit the floor
        fs = max(0.05, 1.0 + su * rng.standard_normal())
        fk = max(0.05, 1.0 + ku * rng.standard_normal())
        return replace(self, scale=self.scale * fs, shape=self.shape * fk)


@dataclass(frozen=True)
class KernelSet:
    """Component delays and their combinations.

    Component labels: ``I2O`` (infection to onset), ``O2C`` (onset to case
    report), ``O2S`` (onset to seroconversion), ``C2F`` (report to death).
    """

    components: Mapping[str, WeibullSpec]

    REQUIRED = ("I2O", "O2C", "O2S", "C2F")

    def __post_init__(self):
        missing = [k for k in self.REQUIRED if k not in self.components]
        if missing:
            raise ValueError(f"kernel set lacks components {missing}")

    @classmethod
    def from_json(cls, path) -> "KernelSet":
        doc = json.loads(Path(path).read_text())
        specs = {}
        for item in doc["kernels"]:
            specs[item["label"]] = WeibullSpec(
                item["label"], float(item["scale"]), float(item["shape"]),
                float(item.get("scale_unc_rel", 0.2)), float(item.get("shape_unc_rel", 0.2)),
                int(item.get("t_max", 60)),
            )
        return cls(specs)

    @classmethod
    def default(cls) -> "KernelSet":
        return cls.from_json(Path(__file__).with_name("data") / "kernels.json")

    def perturbed(self, rng: np.random.Generator, rel: float | None = None) -> "KernelSet":
        return KernelSet({k: v.perturbed(rng, rel) for k, v in self.components.items()})

    def combined(self) -> dict[str, DelayKernel]:
        """``C`` (infection to case), ``S`` (to seroconversion), ``F`` (to death)."""
        k = {name: spec.kernel() for name, spec in self.components.items()}
        kc = convolve_kernels(k["I2O"], k["O2C"])
        ks = convolve_kernels(k["I2O"], k["O2S"])
        kf = convolve_kernels(kc, k["C2F"])
        return {"C": replace(kc, label="C"), "S": replace(ks, label="S"), "F": replace(kf, label="F")}


# ---------------------------------------------------------------------------
# series
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EpiSeries:
    """Daily counts starting at ``start``."""

    start: _dt.date
    daily: np.ndarray
    kind: str = "cases"

    def __post_init__(self):
        d = np.asarray(self.daily, dtype=float)
        if d.ndim != 1:
            raise ValueError("daily counts must be 1-D")
        if np.any(d < 0) or not np.all(np.isfinite(d)):
            raise ValueError("daily counts must be finite and non-negative")
        object.__setattr__(self, "daily", d)

    def __len__(self) -> int:
        return self.daily.size

    @property
    def end(self) -> _dt.date:
        return self.start + _dt.timedelta(days=len(self) - 1)

    def dates(self) -> list[_dt.date]:
        return [self.start + _dt.timedelta(days=i) for i in range(len(self))]

    def index_of(self, day) -> int:
        if isinstance(day, (int, np.integer)):
            return int(day)
        return (day - self.start).days

    def cumulative(self) -> np.ndarray:
        return np.cumsum(self.daily)

    def scaled(self, c: float) -> "EpiSeries":
        return EpiSeries(self.start, self.daily * c, self.kind)

    def shifted(self, days: int) -> "EpiSeries":
        return EpiSeries(self.start + _dt.timedelta(days=days), self.daily, self.kind)

    def padded(self, before: int = 0, after: int = 0) -> "EpiSeries":
        d = np.concatenate([np.zeros(before), self.daily, np.zeros(after)])
        return EpiSeries(self.start - _dt.timedelta(days=before), d, self.kind)


def normalize_by_tests(cases: EpiSeries, tests: np.ndarray) -> EpiSeries:
    """Per-day division of case counts by the number of tests (days without tests give 0)."""
    tests = np.asarray(tests, dtype=float)
    if tests.shape != cases.daily.shape:
        raise ValueError("tests column must match the case series length")
    with np.errstate(divide="ignore", invalid="ignore"):
        rate = np.where(tests > 0, cases.daily / tests, 0.0)
    return EpiSeries(cases.start, rate, cases.kind)


def convolve_series(k: DelayKernel, s: EpiSeries, kind: str | None = None) -> EpiSeries:
    """``(K * s)`` on the grid extended by the kernel support."""
    return EpiSeries(s.start, np.convolve(s.daily, k.pdf), kind or s.kind)


def cumulative_response(x_daily: np.ndarray, k: DelayKernel) -> np.ndarray:
    """Cumulative ``(K * X)`` where ``X`` is the cumulative of ``x_daily``."""
    return np.cumsum(np.convolve(np.asarray(x_daily, dtype=float), k.pdf))


# ---------------------------------------------------------------------------
# deconvolution
# ---------------------------------------------------------------------------

class DeconvolutionError(RuntimeError):
    pass


@dataclass(frozen=True)
class DeconvConfig:
    """Tikhonov settings.  ``lambda_r=None`` selects the smallest smooth value on a ladder."""

    lambda_r: float | None = None
    derivative_order: int = 2
    pad_days: int | None = None
    seed: int = 0
    max_iter: int | None = None

    def __post_init__(self):
        if self.lambda_r is not None and self.lambda_r < 0:
            raise ValueError("lambda_r must be >= 0")
        if self.derivative_order not in (0, 1, 2):
            raise ValueError("derivative_order must be 0, 1 or 2")
        if self.pad_days is not None and self.pad_days < 0:
            raise ValueError("pad_days must be >= 0")


def _difference_matrix(n: int, order: int) -> np.ndarray:
    return np.diff(np.eye(n), n=order, axis=0)


def _deconv_solve(y: np.ndarray, k: np.ndarray, pad: int, lam: float, order: int, max_iter):
    m = y.size
    n = m + pad
    full = linalg.convolution_matrix(k, n, mode="full")
    a = full[pad:pad + m]
    if lam > 0:
        reg = lam * _difference_matrix(n, order)
        a_aug = np.vstack([a, reg])
        y_aug = np.concatenate([y, np.zeros(reg.shape[0])])
    else:
        a_aug, y_aug = a, y
    try:
        x, rnorm = optimize.nnls(a_aug, y_aug, maxiter=max_iter)
    except RuntimeError as exc:  # iteration cap
        raise DeconvolutionError(f"NNLS did not converge (lambda_r={lam}): {exc}") from exc
    return x, float(np.linalg.norm(a @ x - y))


def oscillates(x: np.ndarray, rel: float = 0.05) -> bool:
    """True if the second difference flips sign with a jump above ``rel`` of the peak."""
    x = np.asarray(x, dtype=float)
    if x.size < 4 or x.max() <= 0:
        return False
    d2 = np.diff(x, 2)
    flips = np.sign(d2[1:]) * np.sign(d2[:-1]) < 0
    jumps = np.abs(np.diff(d2))
    return bool(np.any(flips & (jumps > rel * x.max())))


def choose_lambda(y: EpiSeries, k: DelayKernel, cfg: DeconvConfig = DeconvConfig(),
                  ladder: Sequence[float] = LAMBDA_LADDER) -> float:
    """Smallest ladder value whose solution does not oscillate."""
    pad = k.pdf.size if cfg.pad_days is None else cfg.pad_days
    scale = max(y.daily.max(), 1.0)
    for lam in ladder:
        x, _ = _deconv_solve(y.daily / scale, k.pdf, pad, lam, cfg.derivative_order, cfg.max_iter)
        if not oscillates(x):
            return float(lam)
    return float(ladder[-1])


def deconvolve(y: EpiSeries, k: DelayKernel, cfg: DeconvConfig = DeconvConfig(), kind: str = "infections") -> EpiSeries:
    """Non-negative Tikhonov-regularized inverse of ``y = K * x``.

    The unknown ``x`` starts ``pad_days`` before ``y`` so early counts can be
    pulled back in time.  The problem is solved in units of the peak of ``y``
    (``lambda_r`` is therefore dimensionless) and rescaled on return.
    """
    pad = k.pdf.size if cfg.pad_days is None else cfg.pad_days
    if pad < k.pdf.size - 1:
        raise ValueError(f"pad_days={pad} shorter than the kernel support {k.pdf.size - 1}")
    lam = choose_lambda(y, k, cfg) if cfg.lambda_r is None else cfg.lambda_r
    scale = max(y.daily.max(), 1.0)
    x, resid = _deconv_solve(y.daily / scale, k.pdf, pad, lam, cfg.derivative_order, cfg.max_iter)
    if not np.all(np.isfinite(x)):
        raise DeconvolutionError(f"non-finite solution (residual {resid:.3g})")
    out = EpiSeries(y.start - _dt.timedelta(days=pad), x * scale, kind)
    return out


# ---------------------------------------------------------------------------
# psi and delay-corrected IFR
# ---------------------------------------------------------------------------

def _interp_index(arr: np.ndarray, pos):
    """Linear interpolation of ``arr`` at fractional indices, held constant past the end."""
    idx = np.arange(arr.size)
    return np.interp(pos, idx, arr)


def psi(t, dt, i_hat: EpiSeries, k_f: DelayKernel, k_s: DelayKernel, tiny: float = 1e-300):
    """Ratio of delayed cumulative deaths at ``t + dt`` to seroconversions at ``t``.

    ``t`` is a date or a day index on the grid of ``i_hat`` (daily infections);
    ``dt`` may be fractional and array valued.
    """
    ti = i_hat.index_of(t)
    num_curve = cumulative_response(i_hat.daily, k_f)
    den_curve = cumulative_response(i_hat.daily, k_s)
    if not 0 <= ti < den_curve.size:
        raise ValueError(f"t={t} outside the series grid")
    den = den_curve[ti]
    if den <= tiny * max(den_curve[-1], 1.0) or den <= 0.0:
        raise ValueError(f"denominator vanishes at t={t} (before the epidemic)")
    num = _interp_index(num_curve, ti + np.asarray(dt, dtype=float))
    return num / den


def corrected_ifr(t, dt, f_cum: EpiSeries, seroprev_count: float, psi_val: float) -> float:
    """Delay-corrected ratio ``F(t + dt) / (psi I_S)``; ``f_cum.daily`` holds cumulative deaths."""
    if psi_val <= 0:
        raise ValueError("psi must be positive")
    if seroprev_count <= 0:
        raise ValueError("seroprevalence count must be positive")
    fi = f_cum.index_of(t) + float(dt)
    return float(_interp_index(f_cum.daily, fi) / (psi_val * seroprev_count))


@dataclass
class PsiSurface:
    """``psi`` on a (t, dt) grid; ``replicates`` holds perturbed surfaces when available."""

    t_grid: np.ndarray
    dt_grid: np.ndarray
    values: np.ndarray
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None
    replicates: np.ndarray | None = None

    def __post_init__(self):
        if np.any(self.values <= 0):
            raise ValueError("psi must be positive")

    def row(self, t) -> int:
        hits = np.flatnonzero(self.t_grid == t)
        if hits.size == 0:
            raise KeyError(f"t={t} not on the surface grid")
        return int(hits[0])


def psi_surface(i_hat: EpiSeries, k_f: DelayKernel, k_s: DelayKernel, t_grid: Iterable[int],
                dt_grid: np.ndarray | None = None) -> PsiSurface:
    dt_grid = np.round(np.arange(0.0, 60.0 + 1e-9, 0.1), 10) if dt_grid is None else np.asarray(dt_grid, float)
    t_grid = np.asarray(list(t_grid), dtype=int)
    vals = np.vstack([psi(int(t), dt_grid, i_hat, k_f, k_s) for t in t_grid])
    return PsiSurface(t_grid, dt_grid, vals)


class NoCrossingError(ValueError):
    """``psi(t, .)`` stays below one on the delay grid."""


def _first_crossing(dt_grid: np.ndarray, values: np.ndarray) -> float:
    if values[0] >= 1.0:
        return float(dt_grid[0])
    above = np.flatnonzero(values >= 1.0)
    if above.size == 0:
        raise NoCrossingError(
            f"psi stays below 1 up to dt={dt_grid[-1]} (max {values.max():.4g}); "
            "read out at the asymptotic limit instead"
        )
    j = int(above[0])
    x0, x1 = dt_grid[j - 1], dt_grid[j]
    y0, y1 = values[j - 1], values[j]
    return float(x0 + (1.0 - y0) * (x1 - x0) / (y1 - y0))


@dataclass(frozen=True)
class OptimalDelay:
    dt: float
    lower: float
    upper: float


def solve_optimal_delay(t, surface: PsiSurface) -> OptimalDelay:
    """Smallest ``dt >= 0`` with ``psi(t, dt) = 1``; 68% band from perturbed replicates."""
    i = surface.row(t)
    dt = _first_crossing(surface.dt_grid, surface.values[i])
    lo = hi = dt
    if surface.replicates is not None:
        sols = []
        for rep in surface.replicates:
            try:
                sols.append(_first_crossing(surface.dt_grid, rep[i]))
            except NoCrossingError:
                continue
        if sols:
            lo, hi = np.percentile(sols, [15.865, 84.135])
    return OptimalDelay(dt, float(min(lo, dt)), float(max(hi, dt)))


def seroreversion_adjust(i_hat: EpiSeries, k_s: DelayKernel, k_r: DelayKernel) -> EpiSeries:
    """Measurable cumulative seroprevalence with antibody decay.

    Returns ``(K_S * I) - (K_R * (K_S * I))`` as a cumulative series on the
    grid extended by both kernel supports.
    """
    x = i_hat.padded(after=k_s.pdf.size + k_r.pdf.size).daily
    conv = np.convolve(x, k_s.pdf)[: x.size]
    revert = np.convolve(conv, k_r.pdf)[: x.size]
    out = np.cumsum(conv) - np.cumsum(revert)
    neg = out < 0
    if np.any(neg):
        warnings.warn(f"{int(neg.sum())} negative seroprevalence values clipped to 0", RuntimeWarning, stacklevel=2)
        out = np.where(neg, 0.0, out)
    return EpiSeries(i_hat.start, out, "seroprevalence-cumulative")


# ---------------------------------------------------------------------------
# uncertainty propagation
# ---------------------------------------------------------------------------

def window_mean(cum: EpiSeries, period: tuple, dt: float = 0.0) -> float:
    """Mean of a cumulative series over the days of ``period`` shifted by ``dt`` (fractional ok)."""
    a, b = cum.index_of(period[0]), cum.index_of(period[1])
    if b < a:
        raise ValueError("period end precedes start")
    pos = np.arange(a, b + 1) + float(dt)
    if pos[0] < 0 or pos[-1] > cum.daily.size - 1:
        raise ValueError(f"window {period} shifted by {dt} days leaves the series")
    return float(np.mean(_interp_index(cum.daily, pos)))


@dataclass
class DelayUncertainty:
    t_index: int
    dt_grid: np.ndarray
    psi_central: np.ndarray
    psi_lower: np.ndarray
    psi_upper: np.ndarray
    optimal: OptimalDelay
    delta_gamma: float | None
    n_failed: int
    replicate_dt: np.ndarray = field(repr=False, default=None)
    n_truncated: int = 0  # replicates whose perturbed kernels lost > 0.1% mass at t_max


def _midpoint(period, start: _dt.date) -> int:
    a, b = period
    if isinstance(a, _dt.date):
        a, b = (a - start).days, (b - start).days
    return int(round(0.5 * (a + b)))


def propagate_delay_uncertainty(
    cases: EpiSeries,
    kernels: KernelSet,
    period: tuple,
    deaths_cum: EpiSeries | None = None,
    n_mc: int = 200,
    seed: int = 0,
    cfg: DeconvConfig = DeconvConfig(),
    rel_unc: float | None = None,
    poisson: bool = True,
    dt_grid: np.ndarray | None = None,
) -> DelayUncertainty:
    """Toy Monte Carlo over Poisson-fluctuated cases and Gaussian-perturbed kernels.

    For each replicate the cases are deconvolved with the perturbed
    infection-to-case kernel and ``psi`` is evaluated at the test-period
    midpoint.  ``delta_gamma`` is the relative spread of the moving-average
    death count read out at each replicate's optimal delay.
    """
    if n_mc < 100:
        raise ValueError("n_mc must be >= 100")
    dt_grid = np.round(np.arange(0.0, 60.0 + 1e-9, 0.1), 10) if dt_grid is None else np.asarray(dt_grid, float)

    k0 = kernels.combined()
    lam = choose_lambda(cases, k0["C"], cfg) if cfg.lambda_r is None else cfg.lambda_r
    fixed = replace(cfg, lambda_r=lam)

    def run(ks: Mapping[str, DelayKernel], y: EpiSeries):
        # a common padding keeps the time grid identical across replicates
        pad = max(fixed.pad_days or 0, ks["C"].pdf.size, k0["C"].pdf.size)
        x = deconvolve(y, ks["C"], replace(fixed, pad_days=pad))
        t_idx = _midpoint(period, cases.start) + pad
        return t_idx, psi(t_idx, dt_grid, x, ks["F"], ks["S"])

    t_idx, central = run(k0, cases)
    opt_c = _first_crossing(dt_grid, central)

    reps, dts, failed, truncated = [], [], 0, 0
    if not poisson and rel_unc == 0.0:
        # nothing is perturbed: every replicate equals the central solution
        reps, dts = [central] * n_mc, [opt_c] * n_mc
    else:
        for i in range(n_mc):
            rng = substream(seed, i)
            y = EpiSeries(cases.start, rng.poisson(cases.daily).astype(float), cases.kind) if poisson else cases
            if rel_unc != 0.0:
                with warnings.catch_warnings(record=True) as caught:
                    warnings.simplefilter("always", RuntimeWarning)
                    ks = kernels.perturbed(rng, rel_unc).combined()
                truncated += any("truncated" in str(w.message) for w in caught)
            else:
                ks = k0
            try:
                _, curve = run(ks, y)
            except (DeconvolutionError, ValueError):
                failed += 1
                continue
            reps.append(curve)
            try:
                dts.append(_first_crossing(dt_grid, curve))
            except NoCrossingError:
                dts.append(np.nan)
    if failed > 0.1 * n_mc:
        raise DeconvolutionError(f"{failed} of {n_mc} replicates failed")
    reps = np.array(reps)
    dts = np.array(dts)
    good = dts[np.isfinite(dts)]
    lo, hi = (np.percentile(good, [15.865, 84.135]) if good.size else (opt_c, opt_c))

    dgamma = None
    if deaths_cum is not None:
        nf_c = window_mean(deaths_cum, period, opt_c)
        nf = np.array([window_mean(deaths_cum, period, d) for d in good])
        dgamma = float(nf.std(ddof=1) / nf_c) if nf.size > 1 and nf_c > 0 else 0.0

    return DelayUncertainty(
        t_idx, dt_grid, central,
        np.percentile(reps, 2.5, axis=0), np.percentile(reps, 97.5, axis=0),
        OptimalDelay(opt_c, float(min(lo, opt_c)), float(max(hi, opt_c))),
        dgamma, failed, dts, truncated,
    )
