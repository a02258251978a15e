"""Command line interface.

Every subcommand writes a delimited table (CSV or JSON) to stdout or
``--output``; a one-line human summary goes to stderr.  ``--plot DIR``
additionally renders PNG figures into ``DIR``.

Exit codes: 0 success, 2 invalid input, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import io
import json
import sys
import warnings
from pathlib import Path

import numpy as np

from . import fusion
from .bayes import FLAT, JEFFREYS, GridCoverageError, GridDensity, ScalePrior, credible_interval, dressed_ratio_posterior
from .bernoulli import CATEGORY_LABELS, PopulationSimConfig, run_population_sim
from .coverage import EXACT_MAX_N, coverage_simulation, default_p_grid
from .dataio import ConfigError, TimeSeriesFormatError, bundled_config_path, load_study_config, load_timeseries
from .intervals import SINGLE_ESTIMATORS, CountPair, InconsistentBeltError, build_neyman_belt, invert_belt
from .pipeline import result_to_json, run_pipeline
from .ratio import (
    BootstrapConfig,
    RatioCounts,
    asinh_ratio_interval,
    bootstrap_ratio_interval,
    conditional_ratio_interval,
    katz_log_interval,
    profile_llr_interval,
)
from .testerr import IllPosedInversionError
from .timeflow import (
    DeconvConfig,
    DeconvolutionError,
    EpiSeries,
    KernelSet,
    NoCrossingError,
    deconvolve,
    propagate_delay_uncertainty,
)

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 2, 3
NUMERIC_ERRORS = (GridCoverageError, DeconvolutionError, NoCrossingError, InconsistentBeltError,
                  fusion.ProductUnderflowError, ArithmeticError, RuntimeError)
INPUT_ERRORS = (ConfigError, TimeSeriesFormatError, IllPosedInversionError, ValueError, KeyError,
                FileNotFoundError, IsADirectoryError)

RATIO_METHODS = ("cond-cp", "cond-midp", "katz", "asinh", "profile", "boot-prc", "boot-bc", "boot-bca")
COMBINE_STRATEGIES = ("mom", "nl", "ot", "ot-invvar", "sum", "prod", "joint-llr")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


def _pct(x: float) -> str:
    return f"{100 * x:.2f}%"


def _interval_row(e, **extra) -> dict:
    return {**extra, "method": e.method, "level": e.level, "point": e.point, "lower": e.lower, "upper": e.upper,
            "flags": ";".join(sorted(e.flags))}


def _summary(e) -> str:
    return f"{e.method} CI{round(100 * e.level)}: {_pct(e.point)} [{_pct(e.lower)}, {_pct(e.upper)}]"


# ---------------------------------------------------------------------------
# subcommands; each returns (rows, summary line)
# ---------------------------------------------------------------------------

def cmd_interval(a):
    c = CountPair(a.k, a.n)
    if a.method == "llr-mc":
        hi = min(1.0, max(10 * (a.k + 1) / a.n, 0.02))
        belt = build_neyman_belt(a.n, a.level, grid_size=a.grid_size, mc_samples=a.mc_samples,
                                 seed=a.seed, theta_range=(0.0, hi))
        e = invert_belt(belt, a.k)
    else:
        e = SINGLE_ESTIMATORS[a.method](c, a.level)
    return [_interval_row(e, k=a.k, n=a.n)], _summary(e)


def cmd_ratio(a):
    c = RatioCounts(a.k1, a.n1, a.k2, a.n2)
    m = a.method
    if m.startswith("cond-"):
        e = conditional_ratio_interval(c, a.level, base=m.split("-")[1])
    elif m == "katz":
        e = katz_log_interval(c, a.level)
    elif m == "asinh":
        e = asinh_ratio_interval(c, a.level)
    elif m == "profile":
        e = profile_llr_interval(c, a.level)
    else:
        cfg = BootstrapConfig(replicates=a.replicates, variant=m.split("-")[1], seed=a.seed)
        e = bootstrap_ratio_interval(c, a.level, cfg)
    return [_interval_row(e, k1=a.k1, n1=a.n1, k2=a.k2, n2=a.n2)], _summary(e)


def cmd_posterior(a):
    c = RatioCounts(a.k1, a.n1, a.k2, a.n2)
    prior = FLAT if a.prior == "flat" else JEFFREYS
    d = dressed_ratio_posterior(c, (prior, prior), gamma=ScalePrior(1.0, a.delta_gamma),
                                lam=ScalePrior(1.0, a.delta_lambda))
    if a.density_out:
        d.to_csv(a.density_out)
    if a.plot:
        from .plots import plot_densities
        plot_densities([d], [f"{a.prior} prior"], Path(a.plot) / "posterior.png")
    e = credible_interval(d, a.level)
    row = _interval_row(e, k1=a.k1, n1=a.n1, k2=a.k2, n2=a.n2)
    row.update(mode=e.info["mode"], mean=e.info["mean"], median=e.info["median"])
    return [row], f"posterior mode {_pct(e.info['mode'])}, " + _summary(e)


def cmd_simulate(a):
    cfg = PopulationSimConfig.from_counts(a.k_f, a.n_p, a.k_i, a.n_t, rho_if=a.rho, n_mc=a.n_mc, seed=a.seed,
                                          fluctuate_test_count=a.fluctuate_tests)
    st = run_population_sim(cfg)
    if a.matrix_out:
        st.matrix_to_csv(a.matrix_out)
    if a.plot:
        from .plots import plot_category_counts
        plot_category_counts(st, Path(a.plot) / "simulation.png", list(CATEGORY_LABELS))
    se = st.mc_standard_errors()
    rows = [{**r, "mc_se": float(s)} for r, s in zip(st.table_rows(), se)]
    full = np.quantile(st.ifr_full, [0.025, 0.5, 0.975])
    return rows, f"full-population IFR median {_pct(full[1])} [{_pct(full[0])}, {_pct(full[2])}]"


def cmd_deconv(a):
    data = load_timeseries(a.timeseries)
    kernels = KernelSet.from_json(a.kernels) if a.kernels else KernelSet.default()
    cfg = DeconvConfig(lambda_r=a.lambda_r)
    k = kernels.combined()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        x = deconvolve(data.cases, k["C"], cfg)
        unc = None
        if a.period:
            period = tuple(_dt.date.fromisoformat(p) for p in a.period)
            cum = EpiSeries(data.deaths.start, data.deaths.cumulative(), "deaths-cumulative")
            unc = propagate_delay_uncertainty(data.cases, kernels, period, cum, n_mc=a.n_mc, seed=a.seed, cfg=cfg)
    if unc is None:
        rows = [{"date": d.isoformat(), "infections": float(v)} for d, v in zip(x.dates(), x.daily)]
        return rows, f"deconvolved {len(data)} days into {len(x)} daily infection values"
    if a.plot:
        from .plots import plot_psi
        plot_psi(unc.dt_grid, unc.psi_central, unc.psi_lower, unc.psi_upper, Path(a.plot) / "psi.png", unc.optimal.dt)
    rows = [{"dt": float(t), "psi": float(c), "psi_lo": float(lo), "psi_hi": float(hi)}
            for t, c, lo, hi in zip(unc.dt_grid, unc.psi_central, unc.psi_lower, unc.psi_upper)]
    o = unc.optimal
    dg = "n/a" if unc.delta_gamma is None else f"{100 * unc.delta_gamma:.3g}%"
    return rows, f"optimal delay {o.dt:.3g} days [{o.lower:.3g}, {o.upper:.3g}], delta_gamma {dg}"


def _read_counts(path) -> list[RatioCounts]:
    with open(path, newline="") as fh:
        return [RatioCounts(int(r["k1"]), int(r["n1"]), int(r["k2"]), int(r["n2"])) for r in csv.DictReader(fh)]


def cmd_combine(a):
    if a.strategy == "joint-llr":
        if not a.counts:
            raise ValueError("joint-llr needs --counts (CSV with k1,n1,k2,n2 columns)")
        obj = fusion.joint_llr_combine(_read_counts(a.counts), a.level)
    else:
        if len(a.densities) < 2:
            raise ValueError("need at least two density files")
        dens = [GridDensity.from_csv(p) for p in a.densities]
        est = fusion.estimates_from_densities(dens, names=[Path(p).stem for p in a.densities])
        if a.strategy == "mom":
            obj = fusion.mom_combine(est)
        elif a.strategy == "nl":
            obj = fusion.nl_fit(est)
        elif a.strategy == "ot":
            obj = fusion.ot_barycenter(dens)
        elif a.strategy == "ot-invvar":
            obj = fusion.ot_barycenter(dens, weights=[1.0 / e.s**2 for e in est])
        elif a.strategy == "sum":
            obj = fusion.mean_of_posteriors(dens)
        else:
            obj = fusion.product_of_posteriors(dens)
        if a.plot and isinstance(obj, fusion.FusedDensity):
            from .plots import plot_densities
            plot_densities(dens + [obj.density], [Path(p).stem for p in a.densities] + [a.strategy],
                           Path(a.plot) / f"combine_{a.strategy}.png")
    row = fusion.summary_row(a.strategy, obj)
    return [row], (f"{a.strategy}: mode {_pct(row['mode'])}, mean {_pct(row['mean'])}, "
                   f"Q95 [{_pct(row['q95_lo'])}, {_pct(row['q95_hi'])}]")


def cmd_pipeline(a):
    cfg = load_study_config(a.config or bundled_config_path())
    if a.n_mc is not None:
        cfg["n_mc"] = a.n_mc
    cfg["seed"] = a.seed if a.seed is not None else cfg.get("seed", 0)
    delays = a.delays if a.delays is not None else None
    res = run_pipeline(cfg, delays=delays, adaptive=False if a.no_adaptive else None, workers=a.workers)
    if a.outdir:
        out = Path(a.outdir)
        res.write(out)
        dens_dir = out / "densities"
        dens_dir.mkdir(parents=True, exist_ok=True)
        for r in res.results:
            r.density.to_csv(dens_dir / f"{r.name}_{r.delay}.csv")
        (out / "summary.json").write_text(result_to_json(res) + "\n")
    if a.plot:
        from .plots import plot_densities, plot_summary_rows
        for label in sorted({r.delay for r in res.results}, key=lambda s: (not s.isdigit(), s.zfill(4))):
            sub = [r for r in res.results if r.delay == label]
            plot_densities([r.density for r in sub], [r.name for r in sub], Path(a.plot) / f"posteriors_{label}.png")
            plot_summary_rows([r.row() for r in sub], "dataset", Path(a.plot) / f"datasets_{label}.png")
            rows = [c for c in res.combined if c["delay"] == label and np.isfinite(c["q68_lo"])]
            if rows:
                plot_summary_rows(rows, "strategy", Path(a.plot) / f"combined_{label}.png")
    return res.combined, f"{len(res.results)} posteriors, {len(res.skipped)} skipped"


def cmd_coverage(a):
    p_grid = default_p_grid(a.p_step) if a.p_values is None else np.asarray(a.p_values)
    mode = a.mode or ("exact" if a.n <= EXACT_MAX_N else "mc")
    rep = coverage_simulation(a.estimator, a.n, p_grid, a.level, mode, n_mc=a.n_mc, seed=a.seed)
    if a.plot:
        from .plots import plot_coverage
        plot_coverage([rep], Path(a.plot) / f"coverage_{a.estimator}_{a.n}.png")
    low = rep.undercovered()
    msg = f"{a.estimator} n={a.n}: min coverage {rep.coverage.min():.4f}"
    msg += f", below {a.level} at {low.size} of {rep.p_grid.size} grid points" if low.size else ", never below level"
    return rep.rows(), msg


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="master random seed (default 0)")
    common.add_argument("--level", type=float, default=0.95, help="confidence or credible level")
    common.add_argument("--out", choices=("csv", "json"), default="csv", help="output table format")
    common.add_argument("--output", "-o", default=None, help="write the table here instead of stdout")
    common.add_argument("--config", default=None, help="JSON study configuration")
    common.add_argument("--plot", default=None, metavar="DIR", help="also render PNG figures into DIR")

    # shared flags live on each subcommand so they may follow the subcommand name
    p = _Parser(prog="ifrkit", description="Confidence intervals and posteriors for infection fatality rates.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("interval", parents=[common], help="single binomial proportion")
    s.add_argument("--method", choices=sorted(SINGLE_ESTIMATORS) + ["llr-mc"], default="wilson")
    s.add_argument("--k", type=int, required=True)
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--grid-size", type=int, default=2000)
    s.add_argument("--mc-samples", type=int, default=100_000)
    s.set_defaults(func=cmd_interval)

    def counts(sp):
        sp.add_argument("--k1", type=int, required=True, help="fatalities")
        sp.add_argument("--n1", type=int, required=True, help="population")
        sp.add_argument("--k2", type=int, required=True, help="positive tests")
        sp.add_argument("--n2", type=int, required=True, help="tests")

    s = sub.add_parser("ratio", parents=[common], help="ratio of two binomial proportions")
    counts(s)
    s.add_argument("--method", choices=RATIO_METHODS, default="profile")
    s.add_argument("--replicates", type=int, default=1_000_000)
    s.set_defaults(func=cmd_ratio)

    s = sub.add_parser("posterior", parents=[common], help="Bayesian ratio posterior")
    counts(s)
    s.add_argument("--prior", choices=("jeffreys", "flat"), default="jeffreys")
    s.add_argument("--delta-lambda", type=float, default=0.0, help="relative scale uncertainty on k2")
    s.add_argument("--delta-gamma", type=float, default=0.0, help="relative scale uncertainty on k1")
    s.add_argument("--density-out", default=None, help="write the density grid as CSV")
    s.set_defaults(func=cmd_posterior)

    s = sub.add_parser("simulate", parents=[common], help="correlated Bernoulli population simulation")
    s.add_argument("--k-f", type=int, required=True, help="fatalities in the population")
    s.add_argument("--n-p", type=int, required=True, help="population size")
    s.add_argument("--k-i", type=int, required=True, help="positives in the test sample")
    s.add_argument("--n-t", type=int, required=True, help="test sample size")
    s.add_argument("--rho", type=float, default=None, help="infection/fatality correlation (default maximal)")
    s.add_argument("--n-mc", type=int, default=100_000)
    s.add_argument("--fluctuate-tests", action="store_true", help="binomial test count instead of fixed")
    s.add_argument("--matrix-out", default=None, help="write the 8 x n_mc category matrix as CSV")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("deconv", parents=[common], help="delay deconvolution of a case series")
    s.add_argument("--timeseries", required=True, help="CSV with date,daily_cases,daily_deaths[,daily_tests]")
    s.add_argument("--kernels", default=None, help="kernel JSON (default: bundled)")
    s.add_argument("--lambda", dest="lambda_r", type=float, default=None, help="regularization (default: auto)")
    s.add_argument("--period", nargs=2, metavar=("START", "END"), default=None,
                   help="test period; switches output to the correction-ratio curve and optimal delay")
    s.add_argument("--n-mc", type=int, default=200)
    s.set_defaults(func=cmd_deconv)

    s = sub.add_parser("combine", parents=[common], help="fuse per-study posteriors")
    s.add_argument("--strategy", choices=COMBINE_STRATEGIES, required=True)
    s.add_argument("--counts", default=None, help="CSV with k1,n1,k2,n2 (joint-llr)")
    s.add_argument("densities", nargs="*", help="density CSV files (r,density)")
    s.set_defaults(func=cmd_combine)

    s = sub.add_parser("pipeline", parents=[common], help="full multi-study run")
    s.add_argument("--outdir", default=None, help="directory for the CSV tables and densities")
    s.add_argument("--delays", type=int, nargs="*", default=None)
    s.add_argument("--no-adaptive", action="store_true")
    s.add_argument("--n-mc", type=int, default=None)
    s.add_argument("--workers", type=int, default=None)
    s.set_defaults(func=cmd_pipeline)

    s = sub.add_parser("coverage", parents=[common], help="interval coverage harness")
    s.add_argument("--estimator", choices=sorted(SINGLE_ESTIMATORS), required=True)
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--mode", choices=("exact", "mc"), default=None)
    s.add_argument("--p-step", type=float, default=0.001)
    s.add_argument("--p-values", type=float, nargs="*", default=None)
    s.add_argument("--n-mc", type=int, default=100_000)
    s.set_defaults(func=cmd_coverage)
    return p


def _clean(v):
    if isinstance(v, (float, np.floating)):
        return float(v) if np.isfinite(v) else None
    if isinstance(v, np.integer):
        return int(v)
    return v


def format_rows(rows: list[dict], out: str) -> str:
    if out == "json":
        return json.dumps([{k: _clean(v) for k, v in r.items()} for r in rows], indent=2) + "\n"
    buf = io.StringIO()
    if rows:
        w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (f"{v:.10g}" if isinstance(v, (float, np.floating)) else v) for k, v in r.items()})
    return buf.getvalue()


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command != "pipeline":
        args.seed = 0 if args.seed is None else args.seed
    if args.plot:
        Path(args.plot).mkdir(parents=True, exist_ok=True)
    try:
        rows, summary = args.func(args)
    except NUMERIC_ERRORS as err:
        print(f"ifrkit: numerical failure: {err}", file=sys.stderr)
        return EXIT_NUMERIC
    except INPUT_ERRORS as err:
        print(f"ifrkit: invalid input: {err}", file=sys.stderr)
        return EXIT_INPUT
    text = format_rows(rows, args.out)
    if args.output:
        Path(args.output).write_text(text)
    else:
        sys.stdout.write(text)
    print(summary, file=sys.stderr)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
