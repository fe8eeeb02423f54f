"""Simulation study comparing the FPLD estimators on random positive-support
truths: skill score, parameter MSE and fitting time across sample sizes."""

from __future__ import annotations

import csv
import io
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import DomainError, FpldStar, from_star, quantile
from .estimation import ESTIMATORS, FitConfig, _replace, fit
from .scoring import SKILL_MODES, _expected_draws, mean_crps

MAX_REJECTIONS = 100_000


@dataclass(frozen=True)
class SimConfig:
    replicates: int = 500
    sample_size_exponents: tuple = tuple(range(7, 15))
    estimators: tuple = ESTIMATORS
    seed: int = 0
    skill_mode: str = "expected"
    mc_samples: int = 10_000
    strict_finite_support: bool = False
    threads: int = 1
    fit_config: FitConfig = field(default_factory=FitConfig)

    def __post_init__(self):
        if self.replicates < 1:
            raise DomainError("need at least one replicate")
        if not self.sample_size_exponents or min(self.sample_size_exponents) < 3:
            raise DomainError("sample size exponents must be at least 3")
        unknown = set(self.estimators) - set(ESTIMATORS)
        if not self.estimators or unknown:
            raise DomainError(f"unknown estimators {sorted(unknown)}")
        if self.skill_mode not in SKILL_MODES:
            raise DomainError(f"unknown skill mode {self.skill_mode!r}")
        if self.mc_samples < 1 or self.threads < 1:
            raise DomainError("mc_samples and threads must be positive")

    @property
    def sizes(self) -> list[int]:
        return [2 ** e for e in sorted(self.sample_size_exponents)]


@dataclass
class SimRow:
    replicate: int
    n: int
    estimator: str
    skill: float
    mse: float
    elapsed: float
    truth: FpldStar
    estimate: FpldStar
    converged: bool = True

    def to_dict(self) -> dict:
        return {
            "replicate": self.replicate,
            "n": self.n,
            "estimator": self.estimator,
            "skill": self.skill if math.isfinite(self.skill) else None,
            "mse": self.mse if math.isfinite(self.mse) else None,
            "elapsed_ms": 1000.0 * self.elapsed,
            "truth": self.truth.as_array().tolist(),
            "estimate": self.estimate.as_array().tolist(),
            "converged": self.converged,
        }


def _accept(star: FpldStar, strict_finite: bool) -> bool:
    lo, hi = quantile(from_star(star), [0.0, 1.0])
    if strict_finite and not math.isfinite(hi):
        return False
    return bool(lo > 0 and hi - lo > 1)


def sample_lambda_star(rng=None, strict_finite_support: bool = False) -> FpldStar:
    """Rejection sampler for truths with a positive and wide enough support."""
    rng = np.random.default_rng(rng)
    for _ in range(MAX_REJECTIONS):
        star = FpldStar(rng.normal(5.0, 3.0), rng.uniform(1.5, 8.0), rng.uniform(-0.9, 0.9),
                        rng.uniform(0.01, 0.9), rng.uniform(-0.3, 0.7))
        if _accept(star, strict_finite_support):
            return star
    raise RuntimeError(f"no acceptable parameter set after {MAX_REJECTIONS} draws")


def squared_error(truth: FpldStar, estimate: FpldStar) -> float:
    return float(np.mean((truth.as_array() - estimate.as_array()) ** 2))


def parameter_mse(truths: Sequence[FpldStar], estimates: Sequence[FpldStar]) -> float:
    if len(truths) != len(estimates):
        raise DomainError("truths and estimates differ in length")
    if not truths:
        raise DomainError("need at least one replicate")
    return float(np.mean([squared_error(t, e) for t, e in zip(truths, estimates)]))


def _replicate(cfg: SimConfig, r: int) -> list[SimRow]:
    # every replicate owns an independent stream, so results do not depend on scheduling
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, r]))
    truth = sample_lambda_star(rng, cfg.strict_finite_support)
    lam = from_star(truth)
    u = rng.random(max(cfg.sizes))
    data = quantile(lam, np.where(u > 0, u, np.nextafter(0.0, 1.0)))
    if cfg.skill_mode == "expected":
        # common draws for every estimator and n in this replicate
        y_eval = _expected_draws(lam, cfg.mc_samples, rng)
        ref = mean_crps(lam, y_eval)
    rows = []
    for n in cfg.sizes:
        y = data[:n]
        if cfg.skill_mode == "empirical":
            y_eval, ref = y, mean_crps(lam, y)
        for est in cfg.estimators:
            fcfg = _replace(cfg.fit_config, estimator=est)
            start = time.perf_counter()
            try:
                res = fit(y, fcfg)
            except (DomainError, RuntimeError, FloatingPointError):
                rows.append(SimRow(r, n, est, math.nan, math.nan, time.perf_counter() - start,
                                   truth, truth, converged=False))
                continue
            elapsed = time.perf_counter() - start
            try:
                skill = 1.0 - ref / mean_crps(res.params, y_eval)
            except DomainError:
                skill = math.nan
            ok = res.converged and math.isfinite(skill)
            rows.append(SimRow(r, n, est, skill, squared_error(truth, res.params), elapsed,
                               truth, res.params, converged=ok))
    return rows


def run_simulation(cfg: SimConfig) -> list[SimRow]:
    """All replicates, ordered by (replicate, n, estimator)."""
    if cfg.threads > 1:
        with ProcessPoolExecutor(max_workers=cfg.threads) as pool:
            chunks = list(pool.map(_replicate, [cfg] * cfg.replicates, range(cfg.replicates)))
    else:
        chunks = [_replicate(cfg, r) for r in range(cfg.replicates)]
    return [row for chunk in chunks for row in chunk]


@dataclass(frozen=True)
class SummaryCell:
    estimator: str
    n: int
    skill: float
    mse: float
    elapsed: float
    count: int
    excluded: int


def summarize(rows: Sequence[SimRow]) -> list[SummaryCell]:
    """Means per (estimator, n) over converged replicates."""
    estimators = [e for e in ESTIMATORS if any(r.estimator == e for r in rows)]
    sizes = sorted({r.n for r in rows})
    out = []
    for est in estimators:
        for n in sizes:
            cell = [r for r in rows if r.estimator == est and r.n == n]
            good = [r for r in cell if r.converged]
            mean = (lambda xs: float(np.mean(xs)) if xs else math.nan)
            out.append(SummaryCell(est, n, mean([r.skill for r in good]), mean([r.mse for r in good]),
                                   mean([r.elapsed for r in good]), len(good), len(cell) - len(good)))
    return out


def summary_csv(cells: Sequence[SummaryCell], timing: bool = True) -> str:
    """Table with rows metric x estimator and one column per sample size.

    Wall times differ between runs; ``timing=False`` leaves them out so the
    table is reproducible byte for byte.
    """
    sizes = sorted({c.n for c in cells})
    estimators = list(dict.fromkeys(c.estimator for c in cells))
    lookup = {(c.estimator, c.n): c for c in cells}
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["metric", "estimator"] + [str(n) for n in sizes])
    metrics = [("skill_x1e3", lambda c: 1e3 * c.skill), ("mse", lambda c: c.mse),
               ("time_s", lambda c: c.elapsed), ("excluded", lambda c: c.excluded)]
    if not timing:
        metrics = [m for m in metrics if m[0] != "time_s"]
    for name, get in metrics:
        for est in estimators:
            w.writerow([name, est] + [_fmt(get(lookup[est, n])) for n in sizes])
    return buf.getvalue()


def _fmt(v) -> str:
    return str(v) if isinstance(v, int) else repr(float(v))


def rows_json(rows: Sequence[SimRow], timing: bool = True) -> str:
    docs = [r.to_dict() for r in rows]
    if not timing:
        for d in docs:
            d.pop("elapsed_ms")
    return json.dumps(docs, sort_keys=True, indent=1) + "\n"
