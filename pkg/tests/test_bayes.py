import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from ifrkit.bayes import (
    FLAT,
    HALDANE,
    JEFFREYS,
    BetaParams,
    GridCoverageError,
    GridDensity,
    GridSpec,
    ScalePrior,
    TruncationWarning,
    beta_posterior,
    credible_interval,
    dressed_ratio_posterior,
    ratio_posterior,
    ratio_posterior_closed_form,
)
from ifrkit.intervals import CountPair
from ifrkit.ratio import RatioCounts

GANGELT = RatioCounts(7, 12597, 138, 919)


@pytest.fixture(scope="module")
def gangelt_jeffreys():
    return ratio_posterior(GANGELT)


# --- conjugate updates ----------------------------------------------------------

@pytest.mark.parametrize(
    "k,n,prior,mean",
    [(0, 10, FLAT, 1 / 12), (0, 10, JEFFREYS, 0.5 / 11), (5, 10, HALDANE, 0.5)],
)
def test_beta_posterior_means(k, n, prior, mean):
    assert beta_posterior(CountPair(k, n), prior).mean == pytest.approx(mean, rel=1e-15)


def test_invalid_beta_params():
    with pytest.raises(ValueError):
        BetaParams(0.0, 1.0)
    with pytest.raises(ValueError):
        BetaParams(-1.0, 1.0)
    assert not HALDANE.is_proper and JEFFREYS.is_proper


@given(ka=st.integers(0, 50), kb=st.integers(0, 50), extra_a=st.integers(0, 50), extra_b=st.integers(0, 50))
def test_conjugacy_closure(ka, kb, extra_a, extra_b):
    na, nb = ka + extra_a, kb + extra_b
    if na == 0 or nb == 0:
        return
    step = beta_posterior(CountPair(ka, na), JEFFREYS)
    twice = beta_posterior(CountPair(kb, nb), step)
    once = beta_posterior(CountPair(ka + kb, na + nb), JEFFREYS)
    assert twice == once


# --- grid densities -----------------------------------------------------------

def test_uniform_credible_interval():
    x = np.linspace(0, 1, 10_001)
    e = credible_interval(GridDensity(x, np.ones_like(x)).normalize(), 0.95)
    assert e.lower == pytest.approx(0.025, abs=1e-12)
    assert e.upper == pytest.approx(0.975, abs=1e-12)


def test_grid_density_validation():
    with pytest.raises(ValueError):
        GridDensity([0, 0], [1, 1])
    with pytest.raises(ValueError):
        GridDensity([0, 1], [1, -1])
    with pytest.raises(ValueError):
        GridDensity([0, 1], [0, 0]).normalize()


def test_csv_round_trip(tmp_path, gangelt_jeffreys):
    p = tmp_path / "d.csv"
    gangelt_jeffreys.to_csv(p)
    back = GridDensity.from_csv(p)
    np.testing.assert_array_equal(back.grid, gangelt_jeffreys.grid)
    np.testing.assert_allclose(back.mass, gangelt_jeffreys.mass, rtol=1e-14)


def test_tail_check_flags_truncated_density():
    x = np.linspace(0.01, 1.0, 500)
    d = GridDensity(x, stats.norm.pdf(x, 0.9, 0.1)).normalize()
    with pytest.raises(GridCoverageError) as err:
        d.check_tails()
    lo, hi = err.value.suggested
    assert lo == pytest.approx(x[0]) and hi > x[-1]


def test_tail_check_accepts_covered_density():
    x = np.geomspace(1e-3, 10, 2000)
    d = GridDensity(x, stats.lognorm.pdf(x, 0.3, scale=0.1)).normalize()
    d.check_tails()
    lo, hi = d.tail_mass()
    # oracle: exact lognormal mass beyond the edges
    assert lo < 1e-5 and hi < 1e-5
    assert lo >= 0 and hi >= 0


# --- ratio posteriors ---------------------------------------------------------

def test_gangelt_jeffreys_intervals(gangelt_jeffreys):
    e95 = credible_interval(gangelt_jeffreys, 0.95)
    e68 = credible_interval(gangelt_jeffreys, 0.6827)
    assert (round(100 * e95.lower, 2), round(100 * e95.upper, 2)) == (0.16, 0.74)
    assert (round(100 * e68.lower, 2), round(100 * e68.upper, 2)) == (0.25, 0.54)
    assert round(100 * e95.point, 2) == 0.40


def test_equal_tail_masses(gangelt_jeffreys):
    e = credible_interval(gangelt_jeffreys, 0.95)
    cdf = gangelt_jeffreys.cdf()
    below = np.interp(e.lower, gangelt_jeffreys.grid, cdf)
    above = 1 - np.interp(e.upper, gangelt_jeffreys.grid, cdf)
    assert below == pytest.approx(0.025, abs=1e-6)
    assert above == pytest.approx(0.025, abs=1e-6)


def test_flat_prior_mode_equals_ml_estimate():
    d = ratio_posterior(GANGELT, (FLAT, FLAT))
    step = np.max(np.diff(d.grid)[np.searchsorted(d.grid, GANGELT.rhat) - 2:][:4])
    # ML estimate 0.37% as printed (two decimals), plus one grid step
    assert abs(100 * d.mode() - 0.37) <= 0.005 + 100 * step
    # the change of variables shifts the ratio mode slightly below p1_hat / p2_hat
    assert 0.98 * GANGELT.rhat < d.mode() < GANGELT.rhat


def test_flat_prior_shifts_density_up(gangelt_jeffreys):
    flat = ratio_posterior(GANGELT, (FLAT, FLAT))
    assert flat.mean() > gangelt_jeffreys.mean()


def test_symmetric_counts_give_unit_median():
    d = ratio_posterior(RatioCounts(20, 500, 20, 500))
    step = np.diff(np.log(d.grid))[0]
    assert np.log(d.quantile(0.5)) == pytest.approx(0.0, abs=step)


def test_grid_convergence():
    coarse = credible_interval(ratio_posterior(GANGELT, grid_spec=GridSpec(points=2048)))
    fine = credible_interval(ratio_posterior(GANGELT, grid_spec=GridSpec(points=4096)))
    assert abs(coarse.lower - fine.lower) < 1e-4 * fine.lower
    assert abs(coarse.upper - fine.upper) < 1e-4 * fine.upper


def test_closed_form_cross_check():
    c = RatioCounts(2, 50, 5, 40)
    d = ratio_posterior(c, (FLAT, FLAT))
    r = d.grid[(d.grid > 0.01) & (d.grid < 0.95)]
    closed = ratio_posterior_closed_form(c, (FLAT, FLAT), r)
    ratio = np.interp(r, d.grid, d.mass) / closed
    # shape agrees tightly; the overall scale differs only by the mass outside the finite grid
    np.testing.assert_allclose(ratio, ratio.mean(), rtol=1e-7)
    assert ratio.mean() == pytest.approx(1.0, abs=5e-5)


def test_monte_carlo_oracle():
    # independent route: sample the joint posterior and histogram the ratio
    c = RatioCounts(2, 50, 5, 40)
    d = ratio_posterior(c, (FLAT, FLAT))
    rng = np.random.default_rng(12345)
    m = 4_000_000
    ratio = rng.beta(3, 49, m) / rng.beta(6, 36, m)
    edges = np.linspace(0.0, 2.0, 201)
    hist, _ = np.histogram(ratio, edges)
    dens = hist / (m * np.diff(edges))
    mid = 0.5 * (edges[1:] + edges[:-1])
    ours = np.interp(mid, d.grid, d.mass)
    assert np.max(np.abs(ours - dens)) < 0.02 * ours.max()


def test_closed_form_rejects_out_of_range():
    with pytest.raises(ValueError):
        ratio_posterior_closed_form(GANGELT, (FLAT, FLAT), np.array([1.5]))


def test_explicit_bounds_that_cut_mass_raise():
    with pytest.raises(GridCoverageError):
        ratio_posterior(GANGELT, grid_spec=GridSpec(lower=1e-3, upper=5e-3))


def test_automatic_grid_extension_for_wide_posteriors():
    # strong mixing in the positive count spreads mass far past the default bounds
    with pytest.warns(TruncationWarning):
        d = dressed_ratio_posterior(RatioCounts(1, 364134, 13, 2283), lam=ScalePrior(1.0, 0.43))
    d.check_tails()
    assert d.integral() == pytest.approx(1.0)


def test_improper_prior_with_zero_counts_rejected():
    with pytest.raises(ValueError):
        ratio_posterior(RatioCounts(0, 100, 5, 50), (HALDANE, JEFFREYS))


# --- dressed posteriors -------------------------------------------------------

def test_point_scale_priors_reproduce_plain_posterior(gangelt_jeffreys):
    d = dressed_ratio_posterior(GANGELT)
    assert np.max(np.abs(d.mass - gangelt_jeffreys.mass)) < 1e-9


def test_dressing_widens_interval(gangelt_jeffreys):
    plain = credible_interval(gangelt_jeffreys)
    dressed = credible_interval(dressed_ratio_posterior(GANGELT, lam=ScalePrior(1.0, 0.2)))
    assert dressed.width > plain.width


@pytest.mark.parametrize("deaths,expect", [(286, (0.41, 0.69)), (294, (0.42, 0.71))])
def test_gva_dressed_interval(deaths, expect):
    # fatality counts at 7 and 21 days delay
    d = dressed_ratio_posterior(RatioCounts(deaths, 499480, 84, 775), lam=ScalePrior(1.0, 0.054))
    e = credible_interval(d)
    assert (round(100 * e.lower, 2), round(100 * e.upper, 2)) == expect


def test_scale_prior_truncation_warning():
    with pytest.warns(TruncationWarning):
        ScalePrior(1.0, 0.6).nodes()
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        ScalePrior(1.0, 0.2).nodes()


def test_scale_prior_nodes_reproduce_moments():
    for fam in ("normal", "gamma"):
        g, w = ScalePrior(1.3, 0.1, fam).nodes()
        assert w.sum() == pytest.approx(1.0)
        # +-6 sigma truncation drops ~2e-9 of the mass
        assert (w * g).sum() == pytest.approx(1.3, rel=1e-6)
        assert np.sqrt((w * (g - 1.3) ** 2).sum()) == pytest.approx(0.1, rel=1e-5)


def test_scale_prior_validation():
    with pytest.raises(ValueError):
        ScalePrior(0.0, 0.1)
    with pytest.raises(ValueError):
        ScalePrior(1.0, -0.1)
    with pytest.raises(ValueError):
        ScalePrior(1.0, 0.1, "cauchy")
