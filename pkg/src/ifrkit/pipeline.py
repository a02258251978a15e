"""End-to-end IFR estimation over a set of prevalence studies.

For every dataset and read-out delay the death count is a test-period moving
average, the test-error scale uncertainty comes from :mod:`testerr`, and in
adaptive mode the delay and its scale uncertainty come from :mod:`timeflow`.
The dressed ratio posteriors are then fused with every strategy of
:mod:`fusion`.
"""

from __future__ import annotations

import csv
import datetime as _dt
import json
import warnings
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import fusion
from .bayes import FLAT, JEFFREYS, GridDensity, ScalePrior, credible_interval, dressed_ratio_posterior
from .dataio import SeriesSet, load_timeseries
from .intervals import IntervalEstimate
from .ratio import RatioCounts
from .testerr import GLOBAL_TEST, TestCharacteristics, invert_prevalence, renormalize_lambda
from .timeflow import EpiSeries, KernelSet, propagate_delay_uncertainty, window_mean

__all__ = [
    "StudyDataset",
    "DatasetResult",
    "PipelineResult",
    "moving_avg_deaths",
    "germany_extrapolation",
    "datasets_from_config",
    "run_pipeline",
    "ADAPTIVE",
]

ADAPTIVE = "adaptive"
STRATEGIES = ("mom", "nl", "ot", "ot-invvar", "sum", "prod", "joint-llr")


def _round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


def moving_avg_deaths(deaths: EpiSeries, period, dt: float = 0, rounded: bool = True):
    """Mean cumulative death count over ``period`` read out ``dt`` days later.

    ``deaths`` holds daily counts; days before its start count as zero deaths.
    """
    cum = EpiSeries(deaths.start, deaths.cumulative(), "deaths-cumulative")
    a = cum.index_of(period[0])
    if a + dt < 0:
        pad = int(np.ceil(-(a + dt)))
        cum = EpiSeries(deaths.start, np.concatenate([np.zeros(pad), cum.daily]), cum.kind)
        cum = EpiSeries(deaths.start - _dt.timedelta(days=pad), cum.daily, cum.kind)
    val = window_mean(cum, period, dt)
    return _round_half_up(val) if rounded else val


def germany_extrapolation(ifr: IntervalEstimate, total_deaths: float) -> IntervalEstimate:
    """Infected-count interval ``deaths / IFR``; the upper IFR bound maps to the lower count."""
    if total_deaths < 0:
        raise ValueError("total_deaths must be non-negative")
    if ifr.upper <= 0 or ifr.point is None or ifr.point <= 0:
        raise ValueError("IFR point and upper bound must be positive")
    hi = np.inf if ifr.lower <= 0 else total_deaths / ifr.lower
    flags = frozenset({"unbounded"}) if ifr.lower <= 0 else frozenset()
    return IntervalEstimate(total_deaths / ifr.upper, hi, ifr.level, total_deaths / ifr.point,
                            f"extrapolated-{ifr.method}", flags)


@dataclass(frozen=True)
class StudyDataset:
    name: str
    population: int
    tests: int
    positives: int
    test_period: tuple[_dt.date, _dt.date]
    tc: TestCharacteristics = GLOBAL_TEST
    positives_corrected: bool = True
    deaths: dict[int, int] = field(default_factory=dict)  # tabulated n_F by delay
    series: SeriesSet | None = None
    fixed_delay: float | None = None

    def __post_init__(self):
        if self.test_period[1] < self.test_period[0]:
            raise ValueError(f"{self.name}: test period ends before it starts")
        if not 0 <= self.positives <= self.tests:
            raise ValueError(f"{self.name}: need 0 <= positives <= tests")

    @property
    def corrected_positives(self) -> int:
        if self.positives_corrected:
            return self.positives
        p = invert_prevalence(self.positives / self.tests, self.tc)
        return _round_half_up(p * self.tests)

    @property
    def seed_key(self) -> int:
        return zlib.crc32(self.name.encode())

    def n_fatal(self, dt: float) -> int:
        """Death count at delay ``dt``: from the daily series when present, else tabulated."""
        if self.series is not None:
            return moving_avg_deaths(self.series.deaths, self.test_period, dt)
        key = int(dt) if float(dt).is_integer() else None
        if key not in self.deaths:
            raise KeyError(f"{self.name}: no death count for a {dt}-day delay and no time series")
        return self.deaths[key]

    def delta_lambda(self) -> float:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            return renormalize_lambda(self.corrected_positives / self.tests, self.tests, self.tc)


def _tc_from(d: dict | None, default: TestCharacteristics) -> TestCharacteristics:
    if not d:
        return default
    return TestCharacteristics(d["sensitivity"], d["specificity"], d.get("sigma_v", 0.0), d.get("sigma_s", 0.0))


def datasets_from_config(cfg: dict) -> list[StudyDataset]:
    tc_global = _tc_from(cfg.get("test"), GLOBAL_TEST)
    out = []
    for d in cfg["datasets"]:
        series = load_timeseries(d["timeseries"]) if "timeseries" in d else None
        out.append(StudyDataset(
            name=d["name"], population=d["population"], tests=d["tests"], positives=d["positives"],
            test_period=tuple(_dt.date.fromisoformat(x) for x in d["test_period"]),
            tc=_tc_from(d.get("test"), tc_global),
            positives_corrected=d.get("positives_corrected", True),
            deaths={int(k): v for k, v in d.get("deaths", {}).items()},
            series=series, fixed_delay=d.get("fixed_delay"),
        ))
    return out


@dataclass
class DatasetResult:
    name: str
    delay: str
    dt: float
    counts: RatioCounts
    delta_lambda: float
    delta_gamma: float
    density: GridDensity
    dt_interval: tuple[float, float] | None = None

    def row(self) -> dict:
        i68 = credible_interval(self.density, 0.6827)
        i95 = credible_interval(self.density, 0.95)
        return {
            "dataset": self.name, "delay": self.delay, "dt": self.dt, "n_fatal": self.counts.k1,
            "delta_lambda": self.delta_lambda, "delta_gamma": self.delta_gamma,
            "mode": self.density.mode(), "mean": self.density.mean(),
            "q68_lo": i68.lower, "q68_hi": i68.upper, "q95_lo": i95.lower, "q95_hi": i95.upper,
        }


@dataclass
class PipelineResult:
    results: list[DatasetResult]
    combined: list[dict]
    delays: list[dict]
    skipped: list[dict]

    def table6(self) -> list[dict]:
        return [r.row() for r in self.results]

    def write(self, outdir) -> list[Path]:
        """Write the per-dataset, combined, delay and skip tables as CSV (percent units)."""
        outdir = Path(outdir)
        outdir.mkdir(parents=True, exist_ok=True)
        files = {
            "datasets.csv": self.table6(),
            "combined.csv": self.combined,
            "delays.csv": self.delays,
            "skipped.csv": self.skipped,
        }
        pct = {"mode", "mean", "q68_lo", "q68_hi", "q95_lo", "q95_hi", "delta_lambda", "delta_gamma"}
        written = []
        for fname, rows in files.items():
            path = outdir / fname
            write_rows(path, rows, pct)
            written.append(path)
        return written


def write_rows(path, rows: list[dict], percent: set = frozenset(), fieldnames=None) -> None:
    fieldnames = fieldnames or (list(rows[0]) if rows else ["dataset", "delay", "reason"])
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fieldnames)
        w.writeheader()
        for r in rows:
            w.writerow({k: _fmt(v, k in percent) for k, v in r.items()})


def _fmt(v, percent: bool):
    if isinstance(v, (float, np.floating)):
        return "nan" if not np.isfinite(v) else f"{100 * v if percent else v:.6g}"
    return v


def _fixed_posterior(ds: StudyDataset, dt: int, prior) -> DatasetResult:
    c = RatioCounts(ds.n_fatal(dt), ds.population, ds.corrected_positives, ds.tests)
    dl = ds.delta_lambda()
    dens = dressed_ratio_posterior(c, (prior, prior), lam=ScalePrior(1.0, dl))
    return DatasetResult(ds.name, str(dt), float(dt), c, dl, 0.0, dens)


def _adaptive_posterior(ds: StudyDataset, kernels: KernelSet, seed: int, n_mc: int, prior):
    dl = ds.delta_lambda()
    if ds.fixed_delay is not None:
        dt, dg, ci = float(ds.fixed_delay), 0.0, (float(ds.fixed_delay),) * 2
    elif ds.series is not None:
        cum = EpiSeries(ds.series.deaths.start, ds.series.deaths.cumulative(), "deaths-cumulative")
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            unc = propagate_delay_uncertainty(ds.series.cases, kernels, ds.test_period, cum,
                                              n_mc=n_mc, seed=seed ^ ds.seed_key)
        dt, dg = unc.optimal.dt, unc.delta_gamma or 0.0
        ci = (unc.optimal.lower, unc.optimal.upper)
    else:
        raise ValueError("adaptive delay needs a daily time series or a fixed_delay")
    if ds.series is not None:
        n_f = moving_avg_deaths(ds.series.deaths, ds.test_period, dt)
    else:
        n_f = ds.n_fatal(dt)
    c = RatioCounts(n_f, ds.population, ds.corrected_positives, ds.tests)
    dens = dressed_ratio_posterior(c, (prior, prior), gamma=ScalePrior(1.0, dg), lam=ScalePrior(1.0, dl))
    return DatasetResult(ds.name, ADAPTIVE, dt, c, dl, dg, dens, ci)


def _fuse(label: str, results: list[DatasetResult]) -> list[dict]:
    if len(results) < 2:
        return []
    dens = [r.density for r in results]
    est = fusion.estimates_from_densities(dens, names=[r.name for r in results])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", fusion.CompatibilityWarning)
        objs = {
            "mom": fusion.mom_combine(est),
            "nl": fusion.nl_fit(est),
            "ot": fusion.ot_barycenter(dens),
            "ot-invvar": fusion.ot_barycenter(dens, weights=[1.0 / e.s**2 for e in est]),
            "sum": fusion.mean_of_posteriors(dens),
            "prod": fusion.product_of_posteriors(dens),
            "joint-llr": fusion.joint_llr_combine([r.counts for r in results]),
        }
    rows = []
    for name in STRATEGIES:
        row = {"delay": label, **fusion.summary_row(name, objs[name])}
        rows.append(row)
    return rows


def run_pipeline(cfg: dict, delays=None, adaptive=None, workers: int | None = None) -> PipelineResult:
    """Run every dataset at every delay, isolating per-dataset failures, then fuse per delay."""
    datasets = datasets_from_config(cfg)
    delays = list(cfg.get("delays", [0, 7, 14, 21]) if delays is None else delays)
    adaptive = cfg.get("adaptive", True) if adaptive is None else adaptive
    seed = int(cfg.get("seed", 0))
    n_mc = int(cfg.get("n_mc", 200))
    prior = FLAT if cfg.get("prior") == "flat" else JEFFREYS
    kernels = KernelSet.from_json(cfg["kernels"]) if "kernels" in cfg else KernelSet.default()
    workers = workers or cfg.get("workers", 1)

    jobs = [(ds, str(dt)) for ds in datasets for dt in delays]
    if adaptive:
        jobs += [(ds, ADAPTIVE) for ds in datasets]

    def work(job):
        ds, label = job
        try:
            if label == ADAPTIVE:
                return _adaptive_posterior(ds, kernels, seed, n_mc, prior)
            return _fixed_posterior(ds, int(label), prior)
        except (ValueError, KeyError, RuntimeError, ArithmeticError) as err:
            msg = err.args[0] if isinstance(err, KeyError) and err.args else str(err)
            return {"dataset": ds.name, "delay": label, "reason": f"{type(err).__name__}: {msg}"}

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            outcomes = list(pool.map(work, jobs))  # map keeps config order
    else:
        outcomes = [work(j) for j in jobs]

    results = [o for o in outcomes if isinstance(o, DatasetResult)]
    skipped = [o for o in outcomes if isinstance(o, dict)]
    labels = [str(dt) for dt in delays] + ([ADAPTIVE] if adaptive else [])
    combined = []
    for label in labels:
        combined += _fuse(label, [r for r in results if r.delay == label])
    delay_rows = [
        {"dataset": r.name, "dt": r.dt, "dt_lo": r.dt_interval[0], "dt_hi": r.dt_interval[1],
         "delta_gamma": r.delta_gamma, "delta_lambda": r.delta_lambda}
        for r in results if r.delay == ADAPTIVE
    ]
    return PipelineResult(results, combined, delay_rows, skipped)


def result_to_json(res: PipelineResult) -> str:
    def clean(rows):
        return [{k: (None if isinstance(v, float) and not np.isfinite(v) else
                     float(v) if isinstance(v, (float, np.floating)) else v) for k, v in r.items()} for r in rows]
    return json.dumps({"datasets": clean(res.table6()), "combined": clean(res.combined),
                       "delays": clean(res.delays), "skipped": res.skipped}, indent=2)
