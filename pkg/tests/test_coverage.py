import numpy as np
import pytest
from scipy import stats

from ifrkit.coverage import CoverageReport, coverage_simulation, default_p_grid, interval_table
from ifrkit.intervals import CountPair, wald_interval


def test_wald_at_half_matches_pmf_oracle():
    # independent route: loop over k, keep the counts whose Wald interval covers 0.5
    n, p = 100, 0.5
    expect = sum(stats.binom.pmf(k, n, p) for k in range(n + 1)
                 if wald_interval(CountPair(k, n), 0.95).lower <= p <= wald_interval(CountPair(k, n), 0.95).upper)
    rep = coverage_simulation("wald", n, [p])
    assert rep.coverage[0] == pytest.approx(expect, abs=1e-14)


def test_exact_mode_has_no_noise():
    a = coverage_simulation("wilson", 50, default_p_grid(0.01))
    b = coverage_simulation("wilson", 50, default_p_grid(0.01))
    np.testing.assert_array_equal(a.coverage, b.coverage)
    np.testing.assert_array_equal(a.mean_width, b.mean_width)


def test_clopper_pearson_never_undercovers():
    rep = coverage_simulation("clopper-pearson", 100)
    assert rep.coverage.min() >= 0.95
    assert rep.undercovered().size == 0


def test_wald_undercovers_small_p():
    rep = coverage_simulation("wald", 100)
    small = rep.p_grid < 0.05
    assert rep.coverage[small].min() < 0.90


def test_mc_mode_close_to_exact():
    grid = [0.02, 0.1, 0.5]
    ex = coverage_simulation("wilson", 200, grid)
    mc = coverage_simulation("wilson", 200, grid, mode="mc", n_mc=20_000, seed=1)
    se = np.sqrt(ex.coverage * (1 - ex.coverage) / 20_000)
    assert np.all(np.abs(mc.coverage - ex.coverage) < 5 * se + 1e-12)
    again = coverage_simulation("wilson", 200, grid, mode="mc", n_mc=20_000, seed=1)
    np.testing.assert_array_equal(mc.coverage, again.coverage)


def test_interval_table_shape_and_mean_width():
    t = interval_table("wilson", 20)
    assert t.shape == (21, 2)
    rep = coverage_simulation("wilson", 20, [0.3])
    w = stats.binom.pmf(np.arange(21), 20, 0.3) @ (t[:, 1] - t[:, 0])
    assert rep.mean_width[0] == pytest.approx(w, rel=1e-12)
    assert rep.relative_width[0] == pytest.approx(w / 0.3, rel=1e-12)


def test_validation():
    with pytest.raises(ValueError):
        coverage_simulation("nope", 10)
    with pytest.raises(ValueError):
        coverage_simulation("wald", 10, [0.0])
    with pytest.raises(ValueError):
        coverage_simulation("wald", 10, mode="other")
    with pytest.raises(ValueError):
        coverage_simulation("wald", 20_000, [0.5])
    with pytest.raises(ValueError):
        CoverageReport("x", 1, 0.95, "exact", np.array([0.5]), np.array([1.5]), np.array([0.1]))


def test_csv_rows(tmp_path):
    rep = coverage_simulation("wald", 10, [0.2, 0.4])
    rep.to_csv(tmp_path / "c.csv")
    lines = (tmp_path / "c.csv").read_text().splitlines()
    assert lines[0] == "p,coverage,mean_width,relative_width"
    assert len(lines) == 3
