"""Shared generators for the test suite: random FPLD truths and synthetic
station files."""

import contextlib
import csv

import numpy as np
import pytest

from fpld.core import FpldStar, from_star, quantile
from fpld.pipeline import StationSeries
from fpld.simstudy import sample_lambda_star


def random_stars(count, seed=0):
    rng = np.random.default_rng(seed)
    return [sample_lambda_star(rng) for _ in range(count)]


def random_naturals(count, seed=0):
    return [from_star(s) for s in random_stars(count, seed)]


SHARED_DTR = FpldStar(8.0, 4.0, -0.1, 0.3, 0.2)


def daily_dates(start, days):
    return np.datetime64(start, "D") + np.arange(days)


def synthetic_station(station_id, dates, truth=SHARED_DTR, seed=0, covariates=None,
                      tmean_scale=3.0):
    """Station whose diurnal range is drawn from ``truth`` on every day."""
    rng = np.random.default_rng(seed)
    n = len(dates)
    u = np.clip(rng.random(n), 1e-12, 1 - 1e-12)
    dtr = quantile(from_star(truth), u)
    tmin = np.round(rng.normal(0.0, tmean_scale, n), 6)
    tmax = tmin + dtr
    tmean = tmin + 0.5 * dtr + rng.normal(0.0, 0.3, n)
    cov = covariates or {}
    return StationSeries(
        station_id=station_id,
        easting=cov.get("easting", float(rng.uniform(0, 5e5))),
        northing=cov.get("northing", float(rng.uniform(6.4e6, 7.9e6))),
        altitude=cov.get("altitude", float(rng.uniform(0, 1200))),
        distance_to_sea=cov.get("distance_to_sea", float(rng.uniform(0, 2e5))),
        dates=np.asarray(dates, dtype="datetime64[D]"),
        tmin=tmin,
        tmax=tmax,
        tmean=tmean,
    )


def write_station_files(stations, obs_path, stations_path):
    with open(stations_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["station_id", "easting", "northing", "altitude", "distance_to_sea"])
        for s in stations:
            w.writerow([s.station_id, repr(s.easting), repr(s.northing), repr(s.altitude),
                        repr(s.distance_to_sea)])
    with open(obs_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["station_id", "date", "tmin", "tmax", "tmean"])
        for s in stations:
            for d, lo, hi, mean in zip(s.dates, s.tmin, s.tmax, s.tmean):
                w.writerow([s.station_id, str(d), repr(float(lo)), repr(float(hi)),
                            repr(float(mean))])


# acceptance outcomes, reported at the end of the run by conftest
ACCEPTANCE = {}


@contextlib.contextmanager
def criterion(number, title):
    try:
        yield
    except pytest.skip.Exception:
        ACCEPTANCE[number] = ("SKIP", title)
        raise
    except BaseException:
        ACCEPTANCE[number] = ("FAIL", title)
        raise
    ACCEPTANCE[number] = ("PASS", title)
    print(f"criterion {number}: PASS {title}")
