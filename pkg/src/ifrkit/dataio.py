"""Time series and study configuration input."""

from __future__ import annotations

import csv
import datetime as _dt
import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from .timeflow import EpiSeries

__all__ = [
    "SeriesSet",
    "TimeSeriesFormatError",
    "ConfigError",
    "load_timeseries",
    "write_timeseries",
    "load_study_config",
    "study_schema",
    "bundled_config_path",
]

REQUIRED_COLUMNS = ("date", "daily_cases", "daily_deaths")
OPTIONAL_COLUMNS = ("daily_tests",)


class TimeSeriesFormatError(ValueError):
    """Malformed time series file."""


class ConfigError(ValueError):
    """Study configuration failed validation."""


@dataclass(frozen=True)
class SeriesSet:
    cases: EpiSeries
    deaths: EpiSeries
    tests: EpiSeries | None = None

    @property
    def start(self) -> _dt.date:
        return self.cases.start

    def __len__(self) -> int:
        return len(self.cases)


def _parse_count(raw: str, col: str, line: int) -> float:
    try:
        v = float(raw)
    except ValueError:
        raise TimeSeriesFormatError(f"line {line}: {col} = {raw!r} is not a number") from None
    if not np.isfinite(v) or v < 0:
        raise TimeSeriesFormatError(f"line {line}: {col} = {raw!r} must be a finite non-negative count")
    return v


def load_timeseries(path) -> SeriesSet:
    """Read a ``date,daily_cases,daily_deaths[,daily_tests]`` CSV on a contiguous daily grid."""
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        header = tuple(reader.fieldnames or ())
        missing = [c for c in REQUIRED_COLUMNS if c not in header]
        if missing:
            raise TimeSeriesFormatError(f"{path}: missing column(s) {', '.join(missing)}")
        unknown = [c for c in header if c not in REQUIRED_COLUMNS + OPTIONAL_COLUMNS]
        if unknown:
            raise TimeSeriesFormatError(f"{path}: unknown column(s) {', '.join(unknown)}")
        has_tests = "daily_tests" in header
        dates, cases, deaths, tests = [], [], [], []
        for line, row in enumerate(reader, start=2):
            try:
                dates.append(_dt.date.fromisoformat(row["date"].strip()))
            except (ValueError, AttributeError):
                raise TimeSeriesFormatError(f"line {line}: malformed date {row['date']!r}") from None
            cases.append(_parse_count(row["daily_cases"], "daily_cases", line))
            deaths.append(_parse_count(row["daily_deaths"], "daily_deaths", line))
            if has_tests:
                tests.append(_parse_count(row["daily_tests"], "daily_tests", line))
    if not dates:
        raise TimeSeriesFormatError(f"{path}: no data rows")

    steps = np.diff([d.toordinal() for d in dates])
    if np.any(steps <= 0):
        bad = dates[int(np.argmax(steps <= 0)) + 1]
        raise TimeSeriesFormatError(f"dates not strictly increasing at {bad.isoformat()}")
    if np.any(steps > 1):
        have = set(dates)
        gaps = [dates[0] + _dt.timedelta(days=i) for i in range((dates[-1] - dates[0]).days + 1)]
        gaps = [d.isoformat() for d in gaps if d not in have]
        raise TimeSeriesFormatError(f"non-contiguous series, missing dates: {', '.join(gaps)}")

    start = dates[0]
    return SeriesSet(
        EpiSeries(start, np.array(cases), "cases"),
        EpiSeries(start, np.array(deaths), "deaths"),
        EpiSeries(start, np.array(tests), "tests") if has_tests else None,
    )


def write_timeseries(path, series: SeriesSet) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        cols = list(REQUIRED_COLUMNS) + (["daily_tests"] if series.tests is not None else [])
        w.writerow(cols)
        for i, d in enumerate(series.cases.dates()):
            row = [d.isoformat(), f"{series.cases.daily[i]:g}", f"{series.deaths.daily[i]:g}"]
            if series.tests is not None:
                row.append(f"{series.tests.daily[i]:g}")
            w.writerow(row)


def study_schema() -> dict:
    return json.loads(resources.files("ifrkit.data").joinpath("study_schema.json").read_text())


def bundled_config_path() -> Path:
    return Path(str(resources.files("ifrkit.data").joinpath("studies.json")))


def load_study_config(path) -> dict:
    """Load and validate a study configuration; relative file paths resolve against its directory."""
    path = Path(path)
    try:
        cfg = json.loads(path.read_text())
    except json.JSONDecodeError as err:
        raise ConfigError(f"{path}: invalid JSON ({err})") from None
    try:
        jsonschema.validate(cfg, study_schema())
    except jsonschema.ValidationError as err:
        loc = "/".join(str(p) for p in err.absolute_path) or "<root>"
        raise ConfigError(f"{path}: {loc}: {err.message}") from None
    for ds in cfg["datasets"]:
        if ds["positives"] > ds["tests"]:
            raise ConfigError(f"{ds['name']}: positives exceed tests")
        a, b = (_dt.date.fromisoformat(x) for x in ds["test_period"])
        if b < a:
            raise ConfigError(f"{ds['name']}: test period ends before it starts")
        if "timeseries" in ds and not Path(ds["timeseries"]).is_absolute():
            ds["timeseries"] = str(path.parent / ds["timeseries"])
    if "kernels" in cfg and not Path(cfg["kernels"]).is_absolute():
        cfg["kernels"] = str(path.parent / cfg["kernels"])
    names = [ds["name"] for ds in cfg["datasets"]]
    if len(set(names)) != len(names):
        raise ConfigError("dataset names must be unique")
    return cfg
