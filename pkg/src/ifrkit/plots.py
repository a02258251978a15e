"""Figure rendering for CLI reports.

Figures are built with the object API on the Agg canvas, so nothing here
touches the global pyplot state or needs a display.
"""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib
import numpy as np
from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure

__all__ = [
    "RC_PARAMS",
    "plot_densities",
    "plot_coverage",
    "plot_category_counts",
    "plot_psi",
    "plot_series",
    "plot_summary_rows",
]

golden = (np.sqrt(5) - 1.0) / 2.0
fig_width = 6.0

RC_PARAMS = {
    "axes.labelsize": 10,
    "font.size": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "lines.linewidth": 1.2,
    "figure.dpi": 150,
    "savefig.bbox": "tight",
}


def _figure(ncols: int = 1, height: float | None = None, nrows: int = 1, **kw):
    with matplotlib.rc_context(RC_PARAMS):
        fig = Figure(figsize=(fig_width, height or fig_width * golden))
        FigureCanvasAgg(fig)
        axes = fig.subplots(nrows, ncols, squeeze=False, **kw).ravel()
    return fig, axes


def _save(fig: Figure, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with matplotlib.rc_context(RC_PARAMS):
        fig.savefig(path)
    return path


def plot_densities(densities: Sequence, labels: Sequence[str], path, percent: bool = True,
                   logx: bool = True, title: str = "") -> Path:
    """Posterior densities (per unit ``ln r`` when ``logx``) with their cumulative curves."""
    fig, (ax, axc) = _figure(2)
    scale = 100.0 if percent else 1.0
    for d, lab in zip(densities, labels):
        x = d.grid * scale
        y = d.mass * d.grid if logx else d.mass
        ax.plot(x, y / y.max(), label=lab)
        axc.plot(x, d.cdf(), label=lab)
    for a in (ax, axc):
        if logx:
            a.set_xscale("log")
        a.set_xlabel("IFR [%]" if percent else "ratio")
    ax.set_ylabel("density (peak normalized)")
    axc.set_ylabel("cumulative")
    axc.axhline(0.025, color="0.6", lw=0.6, ls="--")
    axc.axhline(0.975, color="0.6", lw=0.6, ls="--")
    if len(labels) <= 12:
        ax.legend(frameon=False)
    if title:
        fig.suptitle(title)
    return _save(fig, path)


def plot_coverage(reports: Sequence, path) -> Path:
    """Coverage (top) and relative mean width (bottom) against the true proportion."""
    fig, (ax, axw) = _figure(1, height=fig_width * 0.9, nrows=2, sharex=True)
    for r in reports:
        lab = f"{r.estimator} n={r.n}"
        ax.plot(r.p_grid, r.coverage, label=lab)
        axw.plot(r.p_grid, r.relative_width, label=lab)
    if reports:
        ax.axhline(reports[0].level, color="k", lw=0.6, ls="--")
    ax.set_ylabel("coverage")
    ax.set_ylim(max(0.0, min(r.coverage.min() for r in reports) - 0.02) if reports else 0.0, 1.0)
    axw.set_ylabel("mean width / p")
    axw.set_yscale("log")
    axw.set_xscale("log")
    axw.set_xlabel("true proportion p")
    ax.legend(frameon=False)
    return _save(fig, path)


def plot_category_counts(stats, path, labels=None) -> Path:
    """Simulated IFR distributions: full population against the tested-sample extrapolation."""
    fig, (ax, axs) = _figure(2)
    bins = np.linspace(0.0, max(stats.ifr_full.max(), np.quantile(stats.ifr_extrapolated, 0.999)) * 100, 120)
    ax.hist(stats.ifr_full * 100, bins=bins, histtype="step", density=True, label="full population")
    ax.hist(stats.ifr_extrapolated * 100, bins=bins, histtype="step", density=True, label="test-sample extrapolation")
    ax.set_xlabel("IFR [%]")
    ax.set_ylabel("density")
    ax.legend(frameon=False)
    labels = labels or [f"{i:03b}" for i in range(8)]
    axs.errorbar(np.arange(8), stats.means, yerr=np.abs(stats.q68.T - stats.means), fmt="o", ms=3)
    axs.set_xticks(np.arange(8), labels)
    axs.set_yscale("symlog", linthresh=1.0)
    axs.set_xlabel("category (tested, infected, fatal)")
    axs.set_ylabel("count (mean, Q68)")
    return _save(fig, path)


def plot_psi(dt_grid, central, lower, upper, path, optimal=None) -> Path:
    fig, (ax,) = _figure(1)
    ax.fill_between(dt_grid, lower, upper, alpha=0.3, lw=0)
    ax.plot(dt_grid, central)
    ax.axhline(1.0, color="k", lw=0.6, ls="--")
    if optimal is not None:
        ax.axvline(optimal, color="C3", lw=0.8)
    ax.set_xlabel("read-out delay [days]")
    ax.set_ylabel("correction ratio")
    return _save(fig, path)


def plot_series(series: dict, path, logy: bool = False) -> Path:
    """Daily series sharing one date axis; ``series`` maps label to :class:`EpiSeries`."""
    fig, (ax,) = _figure(1)
    for lab, s in series.items():
        ax.plot(s.dates(), s.daily, label=lab)
    if logy:
        ax.set_yscale("log")
    ax.set_ylabel("daily count")
    ax.legend(frameon=False)
    fig.autofmt_xdate()
    return _save(fig, path)


def plot_summary_rows(rows: Sequence[dict], label_key: str, path, percent: bool = True) -> Path:
    """Forest plot of mode with Q68/Q95 bars for table rows."""
    rows = list(rows)
    fig, (ax,) = _figure(1, height=max(2.0, 0.3 * len(rows) + 1.0))
    s = 100.0 if percent else 1.0
    y = np.arange(len(rows))[::-1]
    for yi, r in zip(y, rows):
        ax.plot([r["q95_lo"] * s, r["q95_hi"] * s], [yi, yi], color="C0", lw=1)
        ax.plot([r["q68_lo"] * s, r["q68_hi"] * s], [yi, yi], color="C0", lw=3)
        ax.plot(r["mode"] * s, yi, "o", color="C3", ms=4)
    ax.set_yticks(y, [str(r[label_key]) for r in rows])
    ax.set_xscale("log")
    ax.set_xlabel("IFR [%]" if percent else "ratio")
    return _save(fig, path)
