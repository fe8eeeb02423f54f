"""Station data pipeline: ingest daily temperature records, split and clean by
season, compute covariates, run marginal and regression fits, and write
deterministic report tables."""

from __future__ import annotations

import csv
import datetime as dt
import io
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Iterable, Optional, Sequence

import numpy as np
from scipy import stats

from .core import DomainError, FpldStar, cdf, from_star, quantile
from .estimation import FitConfig, fit, fit_gamma_ml, fit_lognormal_ml
from .quantreg import fit_bundle, distributional_fit, standardize
from .scoring import crps_fpld, crps_gamma, crps_lognormal, permutation_test_crps, pit_errors

log = logging.getLogger(__name__)

SEASONS = ("winter", "spring", "summer", "autumn")
_MONTH_SEASON = {12: "winter", 1: "winter", 2: "winter", 3: "spring", 4: "spring", 5: "spring",
                 6: "summer", 7: "summer", 8: "summer", 9: "autumn", 10: "autumn", 11: "autumn"}
OBS_COLUMNS = ("station_id", "date", "tmin", "tmax", "tmean")
STATION_COLUMNS = ("station_id", "easting", "northing", "altitude", "distance_to_sea")
COVARIATES = ("easting", "northing", "distance_to_sea", "altitude", "tmean_mean", "tmean_var")
REPORT_COLUMNS = ("station_id", "season", "model", "mean_crps", "e_mu", "e_sigma", "n_obs")
DISTRIBUTIONS = ("fpld", "gamma", "lognormal", "fpld-sym")
REGRESSION_MODES = ("in_sample", "loocv")
_EST_LABEL = {"mq": "MQ", "ml": "ML", "starship": "starship"}
_MISSING = {"", "na", "nan", "null"}


class ValidationError(ValueError):
    """Malformed input files or arguments."""


# --------------------------------------------------------------------------
# ingest


@dataclass
class StationSeries:
    station_id: str
    easting: float
    northing: float
    altitude: float
    distance_to_sea: float
    dates: np.ndarray
    tmin: np.ndarray
    tmax: np.ndarray
    tmean: np.ndarray

    @property
    def dtr(self) -> np.ndarray:
        return self.tmax - self.tmin

    def subset(self, mask) -> "StationSeries":
        return replace(self, dates=self.dates[mask], tmin=self.tmin[mask],
                       tmax=self.tmax[mask], tmean=self.tmean[mask])

    def __eq__(self, other):
        if not isinstance(other, StationSeries):
            return NotImplemented
        meta = ("station_id", "easting", "northing", "altitude", "distance_to_sea")
        arrays = ("dates", "tmin", "tmax", "tmean")
        return (all(getattr(self, a) == getattr(other, a) for a in meta)
                and all(np.array_equal(getattr(self, a), getattr(other, a), equal_nan=True)
                        for a in arrays))


@dataclass
class IngestResult:
    stations: list
    dropped_nonfinite: int = 0
    warnings: list = field(default_factory=list)


def _read_rows(path: str, required: Sequence[str]) -> list[tuple[int, dict]]:
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ValidationError(f"{path}: cannot read ({exc.strerror})") from exc
    if not text.strip():
        return []
    reader = csv.DictReader(io.StringIO(text))
    header = [h.strip() for h in (reader.fieldnames or [])]
    missing = [c for c in required if c not in header]
    if missing:
        raise ValidationError(f"{path}: line 1: missing column(s) {', '.join(missing)}")
    reader.fieldnames = header
    return [(reader.line_num, row) for row in reader]


def _number(path: str, line: int, column: str, raw) -> float:
    text = (raw or "").strip()
    if text.lower() in _MISSING:
        return math.nan
    try:
        return float(text)
    except ValueError:
        raise ValidationError(f"{path}: line {line}: column {column}: not a number: {text!r}") from None


def _read_stations(path: str) -> dict:
    meta = {}
    for line, row in _read_rows(path, STATION_COLUMNS):
        sid = (row["station_id"] or "").strip()
        if not sid:
            raise ValidationError(f"{path}: line {line}: column station_id: empty")
        if sid in meta:
            raise ValidationError(f"{path}: line {line}: column station_id: duplicate {sid!r}")
        vals = {}
        for col in STATION_COLUMNS[1:]:
            v = _number(path, line, col, row[col])
            if not math.isfinite(v):
                raise ValidationError(f"{path}: line {line}: column {col}: missing value")
            vals[col] = v
        meta[sid] = vals
    return meta


def ingest(observations_path: str, stations_path: str) -> IngestResult:
    """Parse the observation and station files into date-sorted series.

    Rows with a missing or non-finite tmin or tmax are dropped and counted; a
    missing tmean is kept as NaN.
    """
    meta = _read_stations(stations_path)
    rows = _read_rows(observations_path, OBS_COLUMNS)
    result = IngestResult([])
    if not rows:
        msg = f"{observations_path}: no observations"
        log.warning(msg)
        result.warnings.append(msg)
        return result
    per_station: dict = {}
    for line, row in rows:
        sid = (row["station_id"] or "").strip()
        if sid not in meta:
            raise ValidationError(f"{observations_path}: line {line}: column station_id: unknown station {sid!r}")
        try:
            day = dt.date.fromisoformat((row["date"] or "").strip())
        except ValueError:
            raise ValidationError(f"{observations_path}: line {line}: column date: "
                                  f"not an ISO date: {row['date']!r}") from None
        tmin = _number(observations_path, line, "tmin", row["tmin"])
        tmax = _number(observations_path, line, "tmax", row["tmax"])
        tmean = _number(observations_path, line, "tmean", row["tmean"])
        if not (math.isfinite(tmin) and math.isfinite(tmax)):
            result.dropped_nonfinite += 1
            continue
        if not math.isfinite(tmean):
            tmean = math.nan
        per_station.setdefault(sid, []).append((day, tmin, tmax, tmean, line))
    for sid in sorted(meta):
        recs = sorted(per_station.get(sid, []), key=lambda r: r[0])
        for a, b in zip(recs, recs[1:]):
            if a[0] == b[0]:
                raise ValidationError(f"{observations_path}: line {b[4]}: column date: "
                                      f"duplicate date {b[0].isoformat()} for station {sid!r}")
        dates = np.array([r[0] for r in recs], dtype="datetime64[D]")
        cols = np.array([r[1:4] for r in recs], dtype=float).reshape(-1, 3)
        m = meta[sid]
        result.stations.append(StationSeries(sid, m["easting"], m["northing"], m["altitude"],
                                             m["distance_to_sea"], dates, cols[:, 0], cols[:, 1], cols[:, 2]))
    if result.dropped_nonfinite:
        log.info("dropped %d rows with missing tmin/tmax", result.dropped_nonfinite)
    return result


# --------------------------------------------------------------------------
# seasons and cleaning


def assign_seasons(dates) -> np.ndarray:
    """Season label per date: DJF winter, MAM spring, JJA summer, SON autumn."""
    d = np.asarray(dates, dtype="datetime64[D]")
    months = (d.astype("datetime64[M]").astype(int) % 12) + 1
    return np.array([_MONTH_SEASON[int(m)] for m in months.ravel()], dtype=object).reshape(d.shape)


@dataclass
class SeasonalDataset:
    season: str
    station_ids: tuple
    dtr: dict
    covariates: dict
    stations: dict = field(default_factory=dict, repr=False)


@dataclass
class CleanResult:
    stations: list
    n_input: int
    dropped: list
    removed_records: int
    datasets: dict

    @property
    def n_retained(self) -> int:
        return len(self.stations)


def seasonal_covariates(station: StationSeries, season: str) -> np.ndarray:
    """Easting, northing, distance to sea, altitude, and the seasonal mean and
    variance (divisor n - 1) of the daily mean temperature."""
    if season not in SEASONS:
        raise DomainError(f"unknown season {season!r}")
    mask = assign_seasons(station.dates) == season
    tmean = station.tmean[mask]
    tmean = tmean[np.isfinite(tmean)]
    if len(tmean) < 2:
        raise DomainError(f"station {station.station_id}: too few tmean values in {season}")
    return np.array([station.easting, station.northing, station.distance_to_sea, station.altitude,
                     float(np.mean(tmean)), float(np.var(tmean, ddof=1))])


def _season_dataset(stations: Sequence[StationSeries], season: str) -> SeasonalDataset:
    dtr, covs = {}, {}
    for st in stations:
        mask = assign_seasons(st.dates) == season
        dtr[st.station_id] = st.dtr[mask]
        try:
            covs[st.station_id] = seasonal_covariates(st, season)
        except DomainError as exc:
            log.warning("%s", exc)
            covs[st.station_id] = None
    ids = tuple(st.station_id for st in stations)
    return SeasonalDataset(season, ids, dtr, covs, {st.station_id: st for st in stations})


def clean(stations: Sequence[StationSeries], min_per_season: int = 180) -> CleanResult:
    """Drop negative-range records, then every station with fewer than
    ``min_per_season`` records in any season."""
    kept, dropped, removed = [], [], 0
    for st in stations:
        ok = st.dtr >= 0
        removed += int(np.sum(~ok))
        st = st.subset(ok)
        seasons = assign_seasons(st.dates)
        counts = {s: int(np.sum(seasons == s)) for s in SEASONS}
        if min(counts.values()) < min_per_season:
            dropped.append(st.station_id)
        else:
            kept.append(st)
    datasets = {s: _season_dataset(kept, s) for s in SEASONS}
    log.info("cleaning kept %d of %d stations", len(kept), len(stations))
    return CleanResult(kept, len(stations), dropped, removed, datasets)


# --------------------------------------------------------------------------
# evaluation reports


@dataclass
class EvalRow:
    station_id: str
    season: str
    model: str
    mean_crps: float
    e_mu: float
    e_sigma: float
    n_obs: int
    params: Optional[dict] = None
    status: str = "ok"

    def to_dict(self) -> dict:
        return {"station_id": self.station_id, "season": self.season, "model": self.model,
                "mean_crps": self.mean_crps, "e_mu": self.e_mu, "e_sigma": self.e_sigma,
                "n_obs": self.n_obs, "params": self.params, "status": self.status}


@dataclass
class EvalReport:
    rows: list = field(default_factory=list)
    scores: dict = field(default_factory=dict)
    pits: dict = field(default_factory=dict)
    qq: dict = field(default_factory=dict)
    coefficients: list = field(default_factory=list)

    def add(self, row: EvalRow, scores=None, pits=None, qq=None):
        self.rows.append(row)
        key = (row.station_id, row.season, row.model)
        if scores is not None:
            self.scores[key] = scores
            self.pits[key] = pits
            self.qq[key] = qq

    def merge(self, other: "EvalReport") -> "EvalReport":
        out = EvalReport(self.rows + other.rows, {**self.scores, **other.scores},
                         {**self.pits, **other.pits}, {**self.qq, **other.qq},
                         self.coefficients + other.coefficients)
        out.sort()
        return out

    def sort(self):
        order = {s: i for i, s in enumerate(SEASONS)}
        self.rows.sort(key=lambda r: (order.get(r.season, 99), r.station_id, r.model))

    def models(self) -> list[str]:
        return list(dict.fromkeys(r.model for r in self.rows))


def model_label(distribution: str, estimator: str = "mq") -> str:
    if distribution == "fpld":
        return f"FPLD({_EST_LABEL[estimator]})"
    if distribution == "fpld-sym":
        return "FPLD(λ3=0)" if estimator == "mq" else f"FPLD(λ3=0,{_EST_LABEL[estimator]})"
    return distribution


_QQ_PROBS = np.arange(1, 100) / 100.0


def _evaluate(y: np.ndarray, scores: np.ndarray, pit: np.ndarray, model_q: np.ndarray):
    e = pit_errors(pit)
    qq = np.column_stack([np.quantile(y, _QQ_PROBS), model_q])
    return float(np.mean(scores)), e.e_mu, e.e_sigma, qq


def _fpld_row(sid, season, label, y, star: FpldStar, status="ok"):
    lam = from_star(star)
    scores = np.atleast_1d(crps_fpld(lam, y))
    pit = np.atleast_1d(cdf(lam, y))
    m, e_mu, e_sigma, qq = _evaluate(y, scores, pit, quantile(lam, _QQ_PROBS))
    params = {"parametrisation": "star", "values": star.as_array().tolist()}
    return EvalRow(sid, season, label, m, e_mu, e_sigma, len(y), params, status), scores, pit, qq


def _baseline_row(sid, season, dist, y):
    pos = y[y > 0]
    if len(pos) < len(y):
        log.info("%s %s %s: %d nonpositive values left out of the fit", sid, season, dist,
                 len(y) - len(pos))
    if dist == "gamma":
        a, rate = fit_gamma_ml(pos)
        scores = crps_gamma(a, rate, y)
        pit = stats.gamma.cdf(y, a, scale=1.0 / rate)
        mq = stats.gamma.ppf(_QQ_PROBS, a, scale=1.0 / rate)
        params = {"shape": a, "rate": rate}
    else:
        mu, sd = fit_lognormal_ml(pos)
        scores = crps_lognormal(mu, sd, y)
        pit = stats.lognorm.cdf(y, sd, scale=math.exp(mu))
        mq = stats.lognorm.ppf(_QQ_PROBS, sd, scale=math.exp(mu))
        params = {"meanlog": mu, "sdlog": sd}
    scores = np.atleast_1d(scores)
    m, e_mu, e_sigma, qq = _evaluate(y, scores, np.atleast_1d(pit), mq)
    return EvalRow(sid, season, dist, m, e_mu, e_sigma, len(y), params), scores, pit, qq


def _failed(sid, season, label, n, exc) -> tuple:
    log.warning("%s %s %s failed: %s", sid, season, label, exc)
    return EvalRow(sid, season, label, math.nan, math.nan, math.nan, n, None, f"failed: {exc}"), None, None, None


def _marginal_task(task):
    sid, season, y, dist, est, cfg = task
    label = model_label(dist, est)
    try:
        if dist in ("gamma", "lognormal"):
            return _baseline_row(sid, season, dist, y)
        fcfg = replace(cfg, estimator=est, fixed_lambda3=0.0 if dist == "fpld-sym" else None)
        res = fit(y, fcfg)
        return _fpld_row(sid, season, label, y, res.params, "ok" if res.converged else "not converged")
    except (DomainError, RuntimeError, FloatingPointError, ValueError) as exc:
        return _failed(sid, season, label, len(y), exc)


def _map(fn: Callable, tasks: list, threads: int) -> list:
    if threads > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, tasks))
    return [fn(t) for t in tasks]


def default_fit_config(positive_support: bool = True) -> FitConfig:
    return FitConfig(enforce_positive_support=positive_support)


def _seasons(datasets: dict, seasons) -> list[str]:
    wanted = SEASONS if seasons is None else tuple(seasons)
    unknown = set(wanted) - set(SEASONS)
    if unknown:
        raise DomainError(f"unknown seasons {sorted(unknown)}")
    return [s for s in SEASONS if s in wanted and s in datasets]


def run_marginal(datasets: dict, estimators: Sequence[str] = ("mq",),
                 distributions: Sequence[str] = ("fpld", "gamma", "lognormal"),
                 fit_config: Optional[FitConfig] = None, seasons=None, threads: int = 1) -> EvalReport:
    """Per-station, per-season fits of every requested model."""
    cfg = fit_config or default_fit_config()
    unknown = set(distributions) - set(DISTRIBUTIONS)
    if unknown:
        raise DomainError(f"unknown distributions {sorted(unknown)}")
    tasks = []
    for season in _seasons(datasets, seasons):
        ds = datasets[season]
        for sid in sorted(ds.station_ids):
            y = ds.dtr[sid]
            for dist in distributions:
                ests = estimators if dist in ("fpld", "fpld-sym") else ("mq",)
                for est in ests:
                    tasks.append((sid, season, y, dist, est, cfg))
    report = EvalReport()
    for out in _map(_marginal_task, tasks, threads):
        report.add(*out)
    report.sort()
    return report


# --------------------------------------------------------------------------
# distributional regression


@dataclass
class TrainingRows:
    raw: np.ndarray
    y: np.ndarray
    tags: np.ndarray
    names: tuple


def training_rows(ds: SeasonalDataset, exclude: Optional[str] = None) -> TrainingRows:
    """Covariate rows for every observation, each tagged with its station.

    Station covariates are constant within a station, so with few stations
    the design can be rank deficient. Covariates are taken in order and
    kept only when they add to the rank of the design (with intercept);
    zero-variance columns are dropped the same way.
    """
    raws, ys, tags = [], [], []
    for sid in sorted(ds.station_ids):
        if sid == exclude or ds.covariates.get(sid) is None:
            continue
        y = ds.dtr[sid]
        raws.append(np.repeat(ds.covariates[sid][None, :], len(y), axis=0))
        ys.append(y)
        tags.append(np.full(len(y), sid, dtype=object))
    if not raws:
        raise DomainError(f"no training stations in {ds.season}")
    raw = np.vstack(raws)
    # rank is decided on the distinct station rows, scaled like the final design
    rows = np.unique(raw, axis=0)
    sd = raw.std(axis=0)
    keep = np.zeros(len(COVARIATES), dtype=bool)
    basis = np.ones((len(rows), 1))
    for j, name in enumerate(COVARIATES):
        if sd[j] > 0:
            trial = np.column_stack([basis, (rows[:, j] - raw[:, j].mean()) / sd[j]])
            if np.linalg.matrix_rank(trial) == trial.shape[1]:
                basis, keep[j] = trial, True
        if not keep[j]:
            log.warning("%s: covariate %s is constant or collinear with earlier covariates "
                        "and is dropped", ds.season, name)
    names = tuple(n for n, k in zip(COVARIATES, keep) if k)
    return TrainingRows(raw[:, keep], np.concatenate(ys), np.concatenate(tags), names)


def _bundle_for(ds: SeasonalDataset, exclude: Optional[str]):
    rows = training_rows(ds, exclude)
    design, _ = standardize(rows.raw, rows.y, rows.names)
    bundle = fit_bundle(design)
    bundle.metadata["columns"] = [COVARIATES.index(n) for n in rows.names]
    bundle.metadata["stations"] = sorted(set(rows.tags.tolist()))
    return bundle


def _regression_task(task):
    season, ds, mode, targets, cfg = task
    label = "FPLD-QR(in-sample)" if mode == "in_sample" else "FPLD-QR(LOOCV)"
    out, coefs = [], []
    bundle = None
    for sid in targets:
        y = ds.dtr[sid]
        try:
            if ds.covariates.get(sid) is None:
                raise DomainError(f"station {sid} has no covariates in {season}")
            if bundle is None or mode == "loocv":
                bundle = _bundle_for(ds, sid if mode == "loocv" else None)
                median = bundle.fits[int(np.argmin(np.abs(bundle.probabilities - 0.5)))]
                coefs.append({"season": season, "held_out": sid if mode == "loocv" else None,
                              "covariates": list(bundle.standardization.names),
                              "beta": median.beta.tolist()})
            x0 = ds.covariates[sid][bundle.metadata["columns"]]
            res = distributional_fit(bundle, x0, cfg)
            status = "ok" if res.converged else "not converged"
            out.append(_fpld_row(sid, season, label, y, res.params, status))
        except (DomainError, RuntimeError, FloatingPointError, ValueError) as exc:
            out.append(_failed(sid, season, label, len(y), exc))
    return out, coefs


def run_regression(datasets: dict, mode: str = "loocv", seasons=None,
                   fit_config: Optional[FitConfig] = None, threads: int = 1) -> EvalReport:
    """Distributional regression evaluated in-sample or by leave-one-station-out."""
    if mode not in REGRESSION_MODES:
        raise DomainError(f"unknown regression mode {mode!r}")
    cfg = fit_config or default_fit_config()
    tasks = []
    for season in _seasons(datasets, seasons):
        ds = datasets[season]
        if len(ds.station_ids) < 3:
            raise DomainError(f"{season}: regression needs at least 3 stations")
        ids = sorted(ds.station_ids)
        if mode == "in_sample":
            tasks.append((season, ds, mode, ids, cfg))
        else:
            tasks.extend((season, ds, mode, [sid], cfg) for sid in ids)
    report = EvalReport()
    for rows, coefs in _map(_regression_task, tasks, threads):
        for row in rows:
            report.add(*row)
        report.coefficients.extend(coefs)
    report.sort()
    return report


# --------------------------------------------------------------------------
# summaries


@dataclass(frozen=True)
class SummaryRow:
    season: str
    model: str
    mean_crps: float
    e_mu: float
    e_sigma: float
    n_obs: int
    n_stations: int
    n_failed: int


def summarize(report: EvalReport) -> list[SummaryRow]:
    """Pooled mean CRPS and PIT errors per (season, model) over all observations."""
    out = []
    for season in SEASONS:
        for model in report.models():
            cell = [r for r in report.rows if r.season == season and r.model == model]
            if not cell:
                continue
            good = [r for r in cell if (r.station_id, season, model) in report.scores]
            if good:
                s = np.concatenate([report.scores[r.station_id, season, model] for r in good])
                u = np.concatenate([report.pits[r.station_id, season, model] for r in good])
                e = pit_errors(u)
                out.append(SummaryRow(season, model, float(np.mean(s)), e.e_mu, e.e_sigma,
                                      len(s), len(good), len(cell) - len(good)))
            else:
                out.append(SummaryRow(season, model, math.nan, math.nan, math.nan, 0, 0, len(cell)))
    return out


def permutation_table(report: EvalReport, reference: str, pairing: str = "station",
                      n_perm: int = 10000, seed: int = 0) -> list[dict]:
    """Paired permutation p-values of every model against ``reference`` per season.

    ``station`` pairs per-station mean scores; ``observation`` pairs the
    individual scores.
    """
    if pairing not in ("station", "observation"):
        raise DomainError(f"unknown pairing {pairing!r}")
    out = []
    for season in SEASONS:
        for model in report.models():
            if model == reference:
                continue
            ids = sorted(sid for sid, s, m in report.scores if s == season and m == model
                         and (sid, season, reference) in report.scores)
            if not ids:
                continue
            if pairing == "station":
                a = np.array([report.scores[sid, season, model].mean() for sid in ids])
                b = np.array([report.scores[sid, season, reference].mean() for sid in ids])
            else:
                a = np.concatenate([report.scores[sid, season, model] for sid in ids])
                b = np.concatenate([report.scores[sid, season, reference] for sid in ids])
            p = permutation_test_crps(a, b, n_perm, seed)
            out.append({"season": season, "model": model, "reference": reference,
                        "pairing": pairing, "mean_difference": float(np.mean(a - b)),
                        "n_pairs": len(a), "p_value": p})
    return out


# --------------------------------------------------------------------------
# output


def _num(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def _csv_text(header: Sequence[str], rows: Iterable[Sequence]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow(row)
    return buf.getvalue()


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not serializable: {type(obj).__name__}")


def _finite(obj):
    # strict JSON has no NaN or infinity; they are written as null
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if isinstance(obj, dict):
        return {k: _finite(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_finite(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _finite(obj.tolist())
    if isinstance(obj, np.generic):
        return _finite(obj.item())
    return obj


def dumps(obj) -> str:
    return json.dumps(_finite(obj), sort_keys=True, indent=1, default=_json_default,
                      ensure_ascii=False, allow_nan=False) + "\n"


def report_csv(report: EvalReport) -> str:
    return _csv_text(REPORT_COLUMNS, ([r.station_id, r.season, r.model, _num(r.mean_crps), _num(r.e_mu),
                                       _num(r.e_sigma), _num(r.n_obs)] for r in report.rows))


def summary_csv(rows: Sequence[SummaryRow]) -> str:
    header = ("season", "model", "mean_crps", "e_mu", "e_sigma", "n_obs", "n_stations", "n_failed")
    return _csv_text(header, ([r.season, r.model, _num(r.mean_crps), _num(r.e_mu), _num(r.e_sigma),
                               _num(r.n_obs), _num(r.n_stations), _num(r.n_failed)] for r in rows))


def _plot_tables(report: EvalReport) -> tuple[str, str]:
    qq_rows, hist_rows = [], []
    edges = np.linspace(0, 1, 11)
    for r in report.rows:
        key = (r.station_id, r.season, r.model)
        if key not in report.qq:
            continue
        for p, (emp, mod) in zip(_QQ_PROBS, report.qq[key]):
            qq_rows.append([r.station_id, r.season, r.model, _num(p), _num(emp), _num(mod)])
        counts, _ = np.histogram(report.pits[key], bins=edges)
        for lo, hi, c in zip(edges[:-1], edges[1:], counts):
            hist_rows.append([r.station_id, r.season, r.model, _num(lo), _num(hi), _num(int(c))])
    qq = _csv_text(("station_id", "season", "model", "p", "empirical", "model_quantile"), qq_rows)
    hist = _csv_text(("station_id", "season", "model", "bin_lower", "bin_upper", "count"), hist_rows)
    return qq, hist


def _write(out_dir: str, name: str, text: str) -> str:
    path = os.path.join(out_dir, name)
    try:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    except OSError as exc:
        raise OSError(f"{path}: cannot write ({exc.strerror})") from exc
    return path


def emit(report: EvalReport, fmt: str, out_dir: str, prefix: str = "report",
         extra: Optional[dict] = None) -> list[str]:
    """Write the report, its season summary and plot data; returns written paths."""
    if fmt not in ("csv", "json"):
        raise DomainError(f"unknown format {fmt!r}")
    os.makedirs(out_dir, exist_ok=True)
    summary = summarize(report)
    paths = []
    if fmt == "csv":
        paths.append(_write(out_dir, f"{prefix}.csv", report_csv(report)))
        paths.append(_write(out_dir, f"{prefix}_summary.csv", summary_csv(summary)))
    else:
        doc = {"rows": [r.to_dict() for r in report.rows],
               "summary": [asdict(row) for row in summary]}
        paths.append(_write(out_dir, f"{prefix}.json", dumps(doc)))
    qq, hist = _plot_tables(report)
    paths.append(_write(out_dir, f"{prefix}_qq.csv", qq))
    paths.append(_write(out_dir, f"{prefix}_pit_hist.csv", hist))
    if report.coefficients:
        paths.append(_write(out_dir, f"{prefix}_coefficients.json", dumps(report.coefficients)))
    for name, obj in (extra or {}).items():
        paths.append(_write(out_dir, name, obj if isinstance(obj, str) else dumps(obj)))
    return paths


def read_report_json(path: str) -> EvalReport:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    report = EvalReport()
    for r in doc["rows"]:
        nan = (lambda v: math.nan if v is None else v)
        report.rows.append(EvalRow(r["station_id"], r["season"], r["model"], nan(r["mean_crps"]),
                                   nan(r["e_mu"]), nan(r["e_sigma"]), r["n_obs"], r["params"], r["status"]))
    return report
