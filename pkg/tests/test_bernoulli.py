import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from ifrkit.bernoulli import (
    CATEGORY_LABELS,
    InadmissibleCorrelationError,
    PopulationSimConfig,
    apply_test_errors,
    category_stats,
    corners_from_moments,
    correlation_range,
    max_coupling,
    nearest_rank_quantile,
    run_population_sim,
    simulate_category_matrix,
)

E_I = 138 / 919
E_F = 7 / 12597


def _cfg(**kw):
    base = dict(k_f=7, n_p=12597, k_i=138, n_t=919, n_mc=20_000, seed=1)
    base.update(kw)
    return PopulationSimConfig.from_counts(**base)


@pytest.fixture(scope="module")
def gangelt_stats():
    return run_population_sim(_cfg())


# --- corner algebra -----------------------------------------------------------

def test_independent_symmetric_coins():
    p = corners_from_moments(0.5, 0.5, 0.0)
    np.testing.assert_allclose(p.corners, 0.25, atol=1e-15)


@given(e_x=st.floats(0.01, 0.99), e_y=st.floats(0.01, 0.99), t=st.floats(0.0, 1.0))
def test_corners_reproduce_moments(e_x, e_y, t):
    lo, hi = correlation_range(e_x, e_y)
    rho = lo + t * (hi - lo)
    p = corners_from_moments(e_x, e_y, rho)
    c = p.corners
    assert c.sum() == pytest.approx(1.0, abs=1e-12)
    assert np.all((c >= 0) & (c <= 1))
    # independent route: moments recomputed from the four corners
    mx, my = c[2] + c[3], c[1] + c[3]
    cov = c[3] - mx * my
    assert mx == pytest.approx(e_x, abs=1e-12)
    assert my == pytest.approx(e_y, abs=1e-12)
    assert cov / np.sqrt(mx * (1 - mx) * my * (1 - my)) == pytest.approx(rho, abs=1e-9)


def test_gangelt_maximum_coupling():
    # printed (rounded) moments; the exact count ratios give 0.05609
    assert max_coupling(0.15016, 0.00055) == pytest.approx(0.0559, abs=1e-4)
    assert max_coupling(E_I, E_F) == pytest.approx(0.0559, abs=3e-4)
    p = corners_from_moments(E_I, E_F, max_coupling(E_I, E_F))
    assert p.p1 == pytest.approx(0.0, abs=1e-12)


def test_symmetric_coins_admit_perfect_correlation():
    assert max_coupling(0.5, 0.5) == pytest.approx(1.0)


def test_max_coupling_closed_form():
    # largest P(1,1) is min(e_x, e_y); convert to correlation by hand
    e_x, e_y = 0.9, 0.1
    expect = (0.1 - 0.09) / np.sqrt(0.9 * 0.1 * 0.1 * 0.9)
    assert max_coupling(e_x, e_y) == pytest.approx(expect, rel=1e-12)


def test_inadmissible_correlation_reports_range():
    with pytest.raises(InadmissibleCorrelationError) as err:
        corners_from_moments(0.3, 0.6, -1.0)
    lo, hi = err.value.rho_range
    # P(1,1) >= max(0, 0.3 + 0.6 - 1) = 0 gives the lower bound
    assert lo == pytest.approx(-0.18 / np.sqrt(0.3 * 0.7 * 0.6 * 0.4), rel=1e-12)
    assert hi == pytest.approx((0.3 - 0.18) / np.sqrt(0.3 * 0.7 * 0.6 * 0.4), rel=1e-12)
    assert "admissible range" in str(err.value)


def test_bad_moments():
    with pytest.raises(ValueError):
        correlation_range(0.0, 0.5)


def test_config_enforces_no_death_without_infection():
    with pytest.raises(ValueError, match="fatalities without infection"):
        _cfg(rho_if=0.0).corners
    with pytest.raises(ValueError):
        PopulationSimConfig(10, 11, 0.5, 0.5, 0.1)


def test_from_counts_moments():
    cfg = _cfg()
    # printed values are truncated, not rounded
    assert 0 <= cfg.mean_t - 0.07295 < 1e-5
    assert 0 <= cfg.mean_i - 0.15016 < 1e-5
    assert 0 <= cfg.mean_f - 0.00055 < 1e-5


# --- simulation ---------------------------------------------------------------

def test_population_and_test_sizes_fixed(gangelt_stats):
    m = gangelt_stats.matrix
    assert np.all(m.sum(axis=0) == 12597)
    assert np.all(m[4:8].sum(axis=0) == 919)


def test_forbidden_categories_empty(gangelt_stats):
    m = gangelt_stats.matrix
    assert np.all(m[CATEGORY_LABELS.index("001")] == 0)
    assert np.all(m[CATEGORY_LABELS.index("101")] == 0)


def test_category_means_match_expectation(gangelt_stats):
    # oracle: multinomial corners times the fixed split into tested / untested
    cfg = _cfg()
    c = cfg.corners.corners
    expect = np.concatenate([(12597 - 919) * c, 919 * c])
    se = gangelt_stats.mc_standard_errors()
    ok = se > 0
    z = np.abs(gangelt_stats.means - expect)[ok] / se[ok]
    assert np.all(z < 4.5)


def test_fluctuating_test_count_has_binomial_size():
    s = run_population_sim(_cfg(fluctuate_test_count=True))
    tested = s.matrix[4:8].sum(axis=0)
    assert tested.mean() == pytest.approx(919, abs=4 * np.sqrt(919 / 20_000))
    assert tested.std() == pytest.approx(np.sqrt(12597 * 0.07295 * 0.92705), rel=0.05)


def test_deterministic_and_seed_sensitive():
    a = simulate_category_matrix(_cfg(n_mc=3000, seed=4, chunk=1000))
    b = simulate_category_matrix(_cfg(n_mc=3000, seed=4, chunk=1000))
    c = simulate_category_matrix(_cfg(n_mc=3000, seed=5, chunk=1000))
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)


def test_statistics_rederive_from_matrix(gangelt_stats, tmp_path):
    p = tmp_path / "m.csv"
    gangelt_stats.matrix_to_csv(p)
    back = np.loadtxt(p, delimiter=",", skiprows=1, dtype=np.int64).T
    again = category_stats(back, 919)
    np.testing.assert_array_equal(again.means, gangelt_stats.means)
    np.testing.assert_array_equal(again.q95, gangelt_stats.q95)
    np.testing.assert_array_equal(again.ifr_extrapolated, gangelt_stats.ifr_extrapolated)


def test_extrapolated_ifr_is_wider(gangelt_stats):
    assert gangelt_stats.ifr_extrapolated.var() > gangelt_stats.ifr_full.var()


def test_full_testing_makes_definitions_coincide():
    s = run_population_sim(_cfg(n_t=12597, k_i=int(round(E_I * 12597)), n_mc=5000))
    d = stats.ks_2samp(s.ifr_full, s.ifr_extrapolated, method="asymp").statistic
    assert d < 3 / np.sqrt(5000)


def test_zero_infection_runs_excluded():
    cfg = PopulationSimConfig(n_p=20, n_t=5, mean_t=0.25, mean_i=0.05, mean_f=0.01, n_mc=2000, seed=3)
    s = run_population_sim(cfg)
    infected = s.matrix[[2, 3, 6, 7]].sum(axis=0)
    assert s.excluded_full == int((infected == 0).sum()) > 0
    assert s.ifr_full.size == 2000 - s.excluded_full


def test_table_rows_layout(gangelt_stats):
    rows = gangelt_stats.table_rows()
    assert [r["category"] for r in rows] == list(CATEGORY_LABELS)
    assert rows[6]["q68_lo"] <= rows[6]["mean"] <= rows[6]["q68_hi"]


# --- helpers ------------------------------------------------------------------

def test_nearest_rank_quantile():
    x = np.arange(1, 11)
    assert nearest_rank_quantile(x, 0.5) == 5
    assert nearest_rank_quantile(x, 0.51) == 6
    assert nearest_rank_quantile(x, 0.025) == 1
    assert nearest_rank_quantile(x, 0.975) == 10


def test_apply_test_errors():
    m = simulate_category_matrix(_cfg(n_mc=4000))
    exact = apply_test_errors(m, 1.0, 1.0)
    np.testing.assert_array_equal(exact, m[6] + m[7])
    noisy = apply_test_errors(m, 0.892, 0.994, seed=2)
    expect = 0.892 * (m[6] + m[7]).mean() + 0.006 * (m[4] + m[5]).mean()
    assert noisy.mean() == pytest.approx(expect, rel=0.01)
    with pytest.raises(ValueError):
        apply_test_errors(m, 1.1, 0.9)
