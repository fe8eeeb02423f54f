"""Command-line interface.

Exit codes: 0 success, 2 invalid input or arguments, 1 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from typing import Optional, Sequence

import numpy as np

from . import pipeline
from .core import (
    DomainError,
    cdf,
    fpld_from_gpd_pair,
    from_star,
    from_unconstrained,
    gpd_quantile,
    reflected_gpd_quantile,
    GpdParams,
    natural,
    params_from_json,
    quantile,
    to_star,
    to_unconstrained,
)
from .estimation import ESTIMATORS, FitConfig, fit
from .pipeline import ValidationError, dumps
from .scoring import SKILL_MODES, crps_fpld, crps_fpld_quadrature, pit_errors
from .simstudy import SimConfig, rows_json, run_simulation, sample_lambda_star, summarize, summary_csv

log = logging.getLogger("fpld")


def _common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="JSON file supplying default values for any flag")
    p.add_argument("--input", help="observations CSV, or a one-column sample file")
    p.add_argument("--stations", help="stations CSV")
    p.add_argument("--out", default="out", help="output directory (default: out)")
    p.add_argument("--format", default="csv", help="report format: csv or json")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--timing", action="store_true",
                   help="also write wall-clock timings (these differ between runs)")


def _station_flags(p: argparse.ArgumentParser):
    p.add_argument("--seasons", default=",".join(pipeline.SEASONS),
                   help="comma-separated subset of winter,spring,summer,autumn")
    p.add_argument("--min-per-season", type=int, default=180)
    p.add_argument("--no-positive-support", action="store_true",
                   help="do not constrain fitted distributions to positive values")


def build_parser() -> tuple[argparse.ArgumentParser, dict]:
    parser = argparse.ArgumentParser(prog="fpld", description="Five-parameter lambda distribution tools")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    subs = {}

    p = sub.add_parser("fit", help="marginal fits per station and season, or of a single sample")
    _common(p)
    _station_flags(p)
    p.add_argument("--estimator", default="mq", help="comma-separated subset of mq,ml,starship")
    p.add_argument("--distribution", default="fpld,gamma,lognormal",
                   help="comma-separated subset of fpld,gamma,lognormal,fpld-sym")
    p.add_argument("--compare-to", help="reference model label for paired permutation tests")
    p.add_argument("--pairing", default="station", help="permutation pairing: station or observation")
    p.add_argument("--n-perm", type=int, default=10000)
    subs["fit"] = p

    p = sub.add_parser("regress", help="distributional quantile regression")
    _common(p)
    _station_flags(p)
    p.add_argument("--mode", default="loocv", help="in-sample or loocv")
    subs["regress"] = p

    p = sub.add_parser("simulate", help="estimator comparison on simulated data")
    _common(p)
    p.add_argument("--replicates", type=int, default=50)
    p.add_argument("--min-exponent", type=int, default=7)
    p.add_argument("--max-exponent", type=int, default=12)
    p.add_argument("--estimators", default=",".join(ESTIMATORS))
    p.add_argument("--skill-mode", default="expected", help="expected or empirical")
    p.add_argument("--mc-samples", type=int, default=10000)
    p.add_argument("--strict-finite-support", action="store_true")
    subs["simulate"] = p

    p = sub.add_parser("crps", help="score a parameter file against observations")
    _common(p)
    p.add_argument("--params", help="parameter JSON file")
    p.add_argument("--y", help="comma-separated observations (instead of --input)")
    subs["crps"] = p

    p = sub.add_parser("check", help="closed forms against independent numerical oracles")
    _common(p)
    p.add_argument("--cases", type=int, default=50)
    subs["check"] = p
    return parser, subs


def _parse(argv: Optional[Sequence[str]]) -> argparse.Namespace:
    parser, subs = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        try:
            with open(args.config, encoding="utf-8") as fh:
                cfg = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ValidationError(f"{args.config}: cannot load config ({exc})") from exc
        if not isinstance(cfg, dict):
            raise ValidationError(f"{args.config}: config must be a JSON object")
        sp = subs[args.command]
        known = {a.dest for a in sp._actions}
        cfg = {k.replace("-", "_"): v for k, v in cfg.items()}
        unknown = sorted(set(cfg) - known - {"config"})
        if unknown:
            raise ValidationError(f"{args.config}: unknown keys {', '.join(unknown)}")
        # explicit command-line flags still win over the config file
        sp.set_defaults(**cfg)
        args = parser.parse_args(argv)
    return args


def _choices(text, allowed: Sequence[str], what: str) -> list[str]:
    items = [t.strip() for t in str(text).split(",") if t.strip()]
    bad = [t for t in items if t not in allowed]
    if not items or bad:
        raise ValidationError(f"invalid {what}: {', '.join(bad) or 'empty'} (allowed: {', '.join(allowed)})")
    return items


def _validate_common(args):
    if args.format not in ("csv", "json"):
        raise ValidationError(f"invalid format {args.format!r}")
    if args.threads < 1:
        raise ValidationError("--threads must be at least 1")


def read_sample(path: str) -> np.ndarray:
    """One number per line; a non-numeric first line is taken as a header."""
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise ValidationError(f"{path}: cannot read ({exc.strerror})") from exc
    values = []
    for i, line in enumerate(lines, start=1):
        text = line.split(",")[0].strip()
        if not text:
            continue
        try:
            values.append(float(text))
        except ValueError:
            if i == 1:
                continue
            raise ValidationError(f"{path}: line {i}: not a number: {text!r}") from None
    y = np.array(values)
    if not np.all(np.isfinite(y)):
        raise ValidationError(f"{path}: non-finite values")
    return y


def _fit_config(args) -> FitConfig:
    return pipeline.default_fit_config(positive_support=not args.no_positive_support)


def _load_datasets(args):
    if not args.input or not args.stations:
        raise ValidationError("--input and --stations are required")
    ing = pipeline.ingest(args.input, args.stations)
    cleaned = pipeline.clean(ing.stations, args.min_per_season)
    counts = {"input_stations": cleaned.n_input, "retained_stations": cleaned.n_retained,
              "dropped_stations": sorted(cleaned.dropped), "removed_negative_records": cleaned.removed_records,
              "dropped_nonfinite_rows": ing.dropped_nonfinite}
    return cleaned, counts


def cmd_fit(args) -> int:
    _validate_common(args)
    estimators = _choices(args.estimator, ESTIMATORS, "estimator")
    if args.stations is None:
        if not args.input:
            raise ValidationError("--input is required")
        y = read_sample(args.input)
        results, timing = [], []
        for est in estimators:
            res = fit(y, replace(_fit_config(args), estimator=est))
            doc = res.to_dict()
            timing.append({"estimator": est, "elapsed_ms": doc.pop("elapsed_ms")})
            results.append(doc)
        os.makedirs(args.out, exist_ok=True)
        pipeline._write(args.out, "fit.json", dumps(results))
        if args.timing:
            pipeline._write(args.out, "fit_timing.json", dumps(timing))
        return 0
    distributions = _choices(args.distribution, pipeline.DISTRIBUTIONS, "distribution")
    seasons = _choices(args.seasons, pipeline.SEASONS, "season")
    if args.pairing not in ("station", "observation"):
        raise ValidationError(f"invalid pairing {args.pairing!r}")
    cleaned, counts = _load_datasets(args)
    report = pipeline.run_marginal(cleaned.datasets, estimators, distributions, _fit_config(args),
                                   seasons, args.threads)
    extra = {"cleaning.json": counts}
    if args.compare_to:
        if args.compare_to not in report.models():
            raise ValidationError(f"unknown reference model {args.compare_to!r}")
        extra["permutation.json"] = pipeline.permutation_table(report, args.compare_to, args.pairing,
                                                               args.n_perm, args.seed)
    pipeline.emit(report, args.format, args.out, "marginal", extra)
    return 0


def cmd_regress(args) -> int:
    _validate_common(args)
    mode = {"in-sample": "in_sample", "in_sample": "in_sample", "loocv": "loocv"}.get(args.mode)
    if mode is None:
        raise ValidationError(f"invalid mode {args.mode!r}")
    seasons = _choices(args.seasons, pipeline.SEASONS, "season")
    cleaned, counts = _load_datasets(args)
    report = pipeline.run_regression(cleaned.datasets, mode, seasons, _fit_config(args), args.threads)
    pipeline.emit(report, args.format, args.out, f"regression_{mode}", {"cleaning.json": counts})
    return 0


def cmd_simulate(args) -> int:
    _validate_common(args)
    if args.skill_mode not in SKILL_MODES:
        raise ValidationError(f"invalid skill mode {args.skill_mode!r}")
    if args.min_exponent > args.max_exponent:
        raise ValidationError("--min-exponent exceeds --max-exponent")
    cfg = SimConfig(replicates=args.replicates,
                    sample_size_exponents=tuple(range(args.min_exponent, args.max_exponent + 1)),
                    estimators=tuple(_choices(args.estimators, ESTIMATORS, "estimator")),
                    seed=args.seed, skill_mode=args.skill_mode, mc_samples=args.mc_samples,
                    strict_finite_support=args.strict_finite_support, threads=args.threads)
    rows = run_simulation(cfg)
    cells = summarize(rows)
    os.makedirs(args.out, exist_ok=True)
    pipeline._write(args.out, "simulation_summary.csv", summary_csv(cells, timing=args.timing))
    pipeline._write(args.out, "simulation_rows.json", rows_json(rows, timing=args.timing))
    return 0


def cmd_crps(args) -> int:
    _validate_common(args)
    if not args.params:
        raise ValidationError("--params is required")
    try:
        with open(args.params, encoding="utf-8") as fh:
            params = params_from_json(fh.read())
    except OSError as exc:
        raise ValidationError(f"{args.params}: cannot read ({exc.strerror})") from exc
    except (KeyError, TypeError, json.JSONDecodeError) as exc:
        raise ValidationError(f"{args.params}: malformed parameter file ({exc})") from exc
    if args.y is not None:
        try:
            y = np.array([float(v) for v in str(args.y).split(",") if v.strip()])
        except ValueError as exc:
            raise ValidationError(f"--y: {exc}") from None
    elif args.input:
        y = read_sample(args.input)
    else:
        raise ValidationError("give observations with --input or --y")
    if len(y) == 0:
        raise ValidationError("no observations")
    if hasattr(params, "tilde1"):
        params = from_unconstrained(params)
    lam = natural(params)
    scores = np.atleast_1d(crps_fpld(lam, y))
    doc = {"n": len(y), "mean_crps": float(np.mean(scores)), "crps": scores.tolist()}
    if len(y) >= 2:
        e = pit_errors(np.atleast_1d(cdf(lam, y)))
        doc.update(e_mu=e.e_mu, e_sigma=e.e_sigma)
    os.makedirs(args.out, exist_ok=True)
    pipeline._write(args.out, "crps.json", dumps(doc))
    return 0


def oracle_checks(seed: int = 0, cases: int = 50) -> list[dict]:
    """Closed-form results against independent numerical references."""
    rng = np.random.default_rng(seed)
    truths = [sample_lambda_star(rng) for _ in range(cases)]
    out = []

    err = 0.0
    for star in truths:
        lam = from_star(star)
        y = float(quantile(lam, rng.uniform(0.01, 0.99)))
        err = max(err, abs(crps_fpld(lam, y) - crps_fpld_quadrature(lam, y)))
    out.append({"check": "crps closed form vs quadrature", "max_error": err, "tolerance": 1e-6})

    err = 0.0
    p = np.linspace(0.001, 0.999, 50)
    for star in truths:
        err = max(err, float(np.max(np.abs(cdf(from_star(star), quantile(from_star(star), p)) - p))))
    out.append({"check": "cdf inverts quantile", "max_error": err, "tolerance": 1e-9})

    err = 0.0
    for star in truths:
        lam = from_star(star)
        back = from_star(to_star(lam)).as_array()
        err = max(err, float(np.max(np.abs(back - lam.as_array()))))
        back = from_unconstrained(to_unconstrained(star)).as_array()
        err = max(err, float(np.max(np.abs(back - star.as_array()))))
    out.append({"check": "reparametrisation round trips", "max_error": err, "tolerance": 1e-10})

    err = 0.0
    probs = np.arange(1, 100) / 100.0
    for _ in range(cases):
        hi = GpdParams(rng.normal(), rng.uniform(0.2, 3), rng.uniform(-0.4, 0.8))
        lo = GpdParams(rng.normal(), rng.uniform(0.2, 3), rng.uniform(-0.4, 0.8))
        a = rng.uniform(0.3, 3)
        # maximum at probability p plus the reflected minimum tail at p**a
        direct = gpd_quantile(hi, probs) + reflected_gpd_quantile(lo, probs ** a)
        err = max(err, float(np.max(np.abs(quantile(fpld_from_gpd_pair(hi, lo, a), probs) - direct))))
    out.append({"check": "GPD difference identity", "max_error": err, "tolerance": 1e-10})

    for row in out:
        row["passed"] = bool(row["max_error"] <= row["tolerance"])
    return out


def cmd_check(args) -> int:
    _validate_common(args)
    if args.cases < 1:
        raise ValidationError("--cases must be positive")
    rows = oracle_checks(args.seed, args.cases)
    for row in rows:
        print(f"{'PASS' if row['passed'] else 'FAIL'}  {row['check']}: max error "
              f"{row['max_error']:.3g} (tolerance {row['tolerance']:g})")
    os.makedirs(args.out, exist_ok=True)
    pipeline._write(args.out, "check.json", dumps(rows))
    return 0 if all(r["passed"] for r in rows) else 1


COMMANDS = {"fit": cmd_fit, "regress": cmd_regress, "simulate": cmd_simulate,
            "crps": cmd_crps, "check": cmd_check}


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = _parse(argv)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ValidationError, DomainError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - any other failure is a runtime error
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


def main_entry():
    sys.exit(main())


if __name__ == "__main__":
    main_entry()
