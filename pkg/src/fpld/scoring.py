"""Continuous ranked probability score (CRPS) and calibration diagnostics."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import integrate, special, stats

from .core import (
    LIMIT_THRESHOLD,
    AnyFpld,
    DomainError,
    SupportInterval,
    cdf,
    natural,
    quantile,
)

SKILL_MODES = ("empirical", "expected")


class QuadratureError(RuntimeError):
    pass


@dataclass(frozen=True)
class PitErrors:
    e_mu: float
    e_sigma: float


def _scaled_expm1(logx, lam: float):
    # (x**lam - 1)/lam from log(x); exact log limit below the threshold
    if abs(lam) < LIMIT_THRESHOLD:
        return logx
    return np.expm1(lam * logx) / lam


def _upper_integral_left(F, a: float):
    """Integral over (F, 1) of (p**a - 1)/a."""
    with np.errstate(divide="ignore", invalid="ignore"):
        head = np.where(F > 0, F * _scaled_expm1(np.log(F), a), 0.0)
    return (-head - (1.0 - F)) / (a + 1.0)


def _upper_integral_right(F, b: float):
    """Integral over (F, 1) of ((1 - p)**b - 1)/b."""
    G = 1.0 - F
    with np.errstate(divide="ignore", invalid="ignore"):
        head = np.where(G > 0, G * _scaled_expm1(np.log(G), b), 0.0)
    return (head - G) / (b + 1.0)


def _weighted_mean(lam: np.ndarray) -> float:
    """Integral of p * Q(p) over (0, 1)."""
    l1, l2, l3, l4, l5 = lam
    return 0.5 * l1 + 0.5 * l2 * (-(1 - l3) / (2 * (l4 + 2))
                                  + (1 + l3) * (l5 + 3) / (2 * (l5 + 1) * (l5 + 2)))


def crps_fpld(params: AnyFpld, y):
    """Closed-form CRPS of an FPLD forecast for one or many observations."""
    lam_obj = natural(params)
    lam = lam_obj.as_array()
    l1, l2, l3, l4, l5 = lam
    if l5 <= -1 or l4 <= -1:
        raise DomainError("CRPS is infinite for tail exponents at or below -1")
    y_arr = np.asarray(y, dtype=float)
    if not np.all(np.isfinite(y_arr)):
        raise DomainError("observations must be finite")
    F = np.asarray(cdf(lam_obj, y_arr), dtype=float)
    upper = (1.0 - F) * l1 + 0.5 * l2 * ((1 - l3) * _upper_integral_left(F, l4)
                                         - (1 + l3) * _upper_integral_right(F, l5))
    out = y_arr * (2 * F - 1) - 2 * _weighted_mean(lam) + 2 * upper
    out = np.maximum(out, 0.0)
    return float(out) if out.ndim == 0 else out


def crps_quadrature(cdf_fn: Callable[[float], float], supp: SupportInterval, y: float,
                    lower_cut: Optional[float] = None, upper_cut: Optional[float] = None,
                    tol: float = 1e-8) -> float:
    """CRPS by adaptive quadrature of the threshold form.

    Infinite support ends are replaced by ``lower_cut``/``upper_cut`` when
    given, otherwise integrated as improper integrals.
    """
    lo = supp.lower if math.isfinite(supp.lower) else (lower_cut if lower_cut is not None else -np.inf)
    hi = supp.upper if math.isfinite(supp.upper) else (upper_cut if upper_cut is not None else np.inf)
    total, err = 0.0, 0.0
    # below y: F(t)**2; above y: (1 - F(t))**2
    a, b = min(lo, y), y
    if b > a:
        val, e, info = _quad(lambda t: cdf_fn(t) ** 2, a, b, tol)
        total, err = total + val, err + e
    a, b = y, max(hi, y)
    if b > a:
        val, e, info = _quad(lambda t: (1.0 - cdf_fn(t)) ** 2, a, b, tol)
        total, err = total + val, err + e
    if err > max(1e3 * tol, 1e-6):
        raise QuadratureError(f"CRPS quadrature did not converge at y={y}: error estimate {err:.3g}")
    return total


def _quad(fn, a, b, tol):
    out = integrate.quad(fn, a, b, epsabs=tol, epsrel=1e-10, limit=500, full_output=1)
    return out[0], out[1], out[2]


def crps_fpld_quadrature(params: AnyFpld, y: float, tail: float = 1e-10) -> float:
    """Quadrature CRPS for an FPLD forecast, tails cut at quantiles ``tail``/``1 - tail``."""
    lam = natural(params)
    cut_lo, cut_hi = quantile(lam, [tail, 1 - tail])
    # a nearly unbounded support (tail index close to 0) would hide the mass from quad
    return crps_quadrature(lambda t: cdf(lam, t), SupportInterval(cut_lo, cut_hi), y)


def crps_lognormal(meanlog: float, sdlog: float, y):
    """Closed-form CRPS of a lognormal forecast."""
    y = np.asarray(y, dtype=float)
    out = np.empty_like(y)
    pos = y > 0
    z = (np.log(y[pos]) - meanlog) / sdlog
    m = math.exp(meanlog + sdlog ** 2 / 2)
    out[pos] = y[pos] * (2 * special.ndtr(z) - 1) - 2 * m * (
        special.ndtr(z - sdlog) + special.ndtr(sdlog / math.sqrt(2)) - 1)
    # y <= 0 is the z -> -inf limit
    out[~pos] = 2 * m * special.ndtr(-sdlog / math.sqrt(2)) - y[~pos]
    return float(out) if out.ndim == 0 else out


def crps_gamma(shape: float, rate: float, y):
    """Closed-form CRPS of a gamma forecast."""
    y = np.asarray(y, dtype=float)
    yc = np.maximum(y, 0.0)
    f_a = special.gammainc(shape, rate * yc)
    f_a1 = special.gammainc(shape + 1, rate * yc)
    out = y * (2 * f_a - 1) - shape / rate * (2 * f_a1 - 1) \
        - 1.0 / (rate * special.beta(0.5, shape))
    return float(out) if out.ndim == 0 else out


def lognormal_cdf(meanlog: float, sdlog: float) -> Callable:
    return lambda t: float(stats.lognorm.cdf(t, sdlog, scale=math.exp(meanlog)))


def gamma_cdf(shape: float, rate: float) -> Callable:
    return lambda t: float(stats.gamma.cdf(t, shape, scale=1.0 / rate))


def mean_crps(params, y) -> float:
    """Mean CRPS of one forecast over many observations, or of paired forecasts."""
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if len(y) == 0:
        raise DomainError("mean CRPS of an empty sample")
    if isinstance(params, Sequence) and not isinstance(params, (str, bytes)):
        if len(params) != len(y):
            raise DomainError("need one forecast per observation")
        scores = np.array([crps_fpld(p, v) for p, v in zip(params, y)])
    else:
        scores = np.atleast_1d(crps_fpld(params, y))
    return float(np.mean(scores))


def _expected_draws(truth: AnyFpld, mc_samples: int, seed) -> np.ndarray:
    # stratified uniforms: one draw in each cell ((i-1)/m, i/m)
    rng = np.random.default_rng(seed)
    u = (np.arange(mc_samples) + rng.random(mc_samples)) / mc_samples
    u = np.clip(u, np.nextafter(0.0, 1.0), np.nextafter(1.0, 0.0))
    return quantile(truth, u)


def skill_score(fitted: AnyFpld, truth: AnyFpld, y=None, mc_samples: int = 10000,
                seed=0, mode: str = "empirical") -> float:
    """Relative CRPS loss of ``fitted`` against the data-generating ``truth``.

    ``empirical`` scores both forecasts on the given observations;
    ``expected`` replaces them by ``mc_samples`` stratified draws from the
    truth, estimating expected scores.
    """
    if mode not in SKILL_MODES:
        raise DomainError(f"unknown skill mode {mode!r}")
    if mode == "expected":
        y = _expected_draws(natural(truth), mc_samples, seed)
    elif y is None:
        raise DomainError("empirical skill needs observations")
    ref = mean_crps(truth, y)
    den = mean_crps(fitted, y)
    if den == 0:
        raise DomainError("zero mean CRPS for the fitted forecast")
    return 1.0 - ref / den


def pit_errors(u) -> PitErrors:
    u = np.asarray(u, dtype=float)
    if len(u) < 2:
        raise DomainError("need at least two PIT values")
    if np.any((u < 0) | (u > 1)):
        raise DomainError("PIT values must lie in [0, 1]")
    return PitErrors(float(np.mean(u) - 0.5), float(np.std(u, ddof=1) - 1 / math.sqrt(12)))


def permutation_test_crps(scores_a, scores_b, n_perm: int = 10000, seed=0) -> float:
    """Two-sided sign-flip permutation p-value for a paired mean score difference."""
    a = np.asarray(scores_a, dtype=float)
    b = np.asarray(scores_b, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise DomainError("paired score vectors must have equal length")
    if n_perm < 1:
        raise DomainError("need at least one permutation")
    d = a - b
    observed = abs(d.mean())
    rng = np.random.default_rng(seed)
    count = 0
    slack = 1e-12 * max(1.0, float(np.abs(d).max(initial=0.0)))
    for start in range(0, n_perm, 1000):
        k = min(1000, n_perm - start)
        signs = rng.choice((-1.0, 1.0), size=(k, len(d)))
        count += int(np.sum(np.abs(signs @ d) / len(d) >= observed - slack))
    return (1 + count) / (1 + n_perm)


def qq_points(params: AnyFpld, y) -> list[tuple[float, float]]:
    y = np.sort(np.asarray(y, dtype=float))
    n = len(y)
    if n < 2:
        raise DomainError("need at least two observations")
    model = quantile(params, (np.arange(1, n + 1) - 0.5) / n)
    return list(zip(y.tolist(), np.asarray(model).tolist()))
