import datetime as dt
import json

import numpy as np
import pytest

from ifrkit.dataio import (
    ConfigError,
    SeriesSet,
    TimeSeriesFormatError,
    bundled_config_path,
    load_study_config,
    load_timeseries,
    write_timeseries,
)
from ifrkit.timeflow import EpiSeries


def _write(tmp_path, text, name="series.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_three_rows(tmp_path):
    p = _write(tmp_path, "date,daily_cases,daily_deaths\n2020-04-01,5,0\n2020-04-02,7,1\n2020-04-03,2,0\n")
    s = load_timeseries(p)
    assert len(s) == 3
    assert s.start == dt.date(2020, 4, 1)
    np.testing.assert_array_equal(s.cases.daily, [5, 7, 2])
    assert s.tests is None


def test_missing_day_named(tmp_path):
    p = _write(tmp_path, "date,daily_cases,daily_deaths\n2020-04-01,5,0\n2020-04-03,2,0\n")
    with pytest.raises(TimeSeriesFormatError, match="2020-04-02"):
        load_timeseries(p)


def test_cumulative_is_prefix_sum(tmp_path):
    rng = np.random.default_rng(3)
    deaths = rng.poisson(4.0, 60)
    start = dt.date(2020, 3, 1)
    rows = [f"{start + dt.timedelta(days=i)},{10 * d},{d},{100 + i}" for i, d in enumerate(deaths)]
    p = _write(tmp_path, "date,daily_cases,daily_deaths,daily_tests\n" + "\n".join(rows) + "\n")
    s = load_timeseries(p)
    for day in (0, 17, 59):
        assert s.deaths.cumulative()[day] == sum(int(x) for x in deaths[: day + 1])
    assert s.tests.daily[-1] == 159


@pytest.mark.parametrize(
    "body,match",
    [
        ("date,daily_cases\n2020-04-01,5\n", "daily_deaths"),
        ("date,daily_cases,daily_deaths,extra\n2020-04-01,5,0,1\n", "unknown"),
        ("date,daily_cases,daily_deaths\n2020-04-01,-5,0\n", "non-negative"),
        ("date,daily_cases,daily_deaths\n2020-04-01,x,0\n", "not a number"),
        ("date,daily_cases,daily_deaths\n01/04/2020,5,0\n", "malformed date"),
        ("date,daily_cases,daily_deaths\n2020-04-02,5,0\n2020-04-01,5,0\n", "strictly increasing"),
        ("date,daily_cases,daily_deaths\n", "no data"),
    ],
)
def test_format_errors(tmp_path, body, match):
    with pytest.raises(TimeSeriesFormatError, match=match):
        load_timeseries(_write(tmp_path, body))


def test_write_round_trip(tmp_path):
    start = dt.date(2020, 5, 1)
    s = SeriesSet(EpiSeries(start, np.array([1.0, 2, 3]), "cases"), EpiSeries(start, np.array([0.0, 1, 0]), "deaths"),
                  EpiSeries(start, np.array([10.0, 20, 30]), "tests"))
    write_timeseries(tmp_path / "s.csv", s)
    back = load_timeseries(tmp_path / "s.csv")
    np.testing.assert_array_equal(back.cases.daily, s.cases.daily)
    np.testing.assert_array_equal(back.tests.daily, s.tests.daily)


def test_bundled_config_validates():
    cfg = load_study_config(bundled_config_path())
    names = [d["name"] for d in cfg["datasets"]]
    assert len(names) == 11 and names[0] == "FIN"


def _mutated(tmp_path, fn):
    cfg = json.loads(bundled_config_path().read_text())
    fn(cfg)
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(cfg))
    return p


@pytest.mark.parametrize(
    "fn,match",
    [
        (lambda c: c["datasets"][0].pop("tests"), "tests"),
        (lambda c: c["datasets"][0].update(positives=10_000), "positives exceed"),
        (lambda c: c["datasets"][0].update(test_period=["2020-06-14", "2020-06-01"]), "ends before"),
        (lambda c: c["datasets"][1].update(name="FIN"), "unique"),
    ],
)
def test_config_errors(tmp_path, fn, match):
    with pytest.raises(ConfigError, match=match):
        load_study_config(_mutated(tmp_path, fn))


def test_config_invalid_json(tmp_path):
    with pytest.raises(ConfigError, match="invalid JSON"):
        load_study_config(_write(tmp_path, "{not json", "bad.json"))


def test_relative_timeseries_path(tmp_path):
    p = _mutated(tmp_path, lambda c: c["datasets"][0].update(timeseries="fin.csv"))
    cfg = load_study_config(p)
    assert cfg["datasets"][0]["timeseries"] == str(tmp_path / "fin.csv")
