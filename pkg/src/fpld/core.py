"""Quantile function, density, CDF and parametrisations of the five-parameter
lambda distribution (FPLD).

The FPLD is defined through its quantile function

    Q(p) = l1 + l2/2 * [(1 - l3) * (p**l4 - 1)/l4 - (1 + l3) * ((1-p)**l5 - 1)/l5]

with the logarithmic limit used whenever a tail exponent is (numerically) zero.
Three interchangeable parameter vectors are supported:

* ``FpldNatural``: ``(l1, l2, l3, l4, l5)`` as in the formula above.
* ``FpldStar``: location replaced by the median and scale by the
  inter-quartile range.
* ``FpldUnconstrained``: an unconstrained image of ``FpldStar`` used by the
  optimisers.
"""

from __future__ import annotations

import json
import math
from dataclasses import astuple, dataclass
from typing import Union

import numba
import numpy as np
from scipy.special import expit, log_expit

LIMIT_THRESHOLD = 1e-10
CDF_TOL = 1e-10
CDF_MAX_ITER = 200

# logit grid used to bracket the CDF root; +-700 keeps expit() above the
# smallest normal double
_T_GRID = np.concatenate(
    [[-700.0, -300.0, -120.0, -60.0], np.arange(-40.0, 40.5, 1.0), [60.0, 120.0, 300.0, 700.0]]
)


class DomainError(ValueError):
    """Raised when an argument lies outside the domain of an operation."""


@dataclass(frozen=True)
class FpldNatural:
    lambda1: float
    lambda2: float
    lambda3: float
    lambda4: float
    lambda5: float

    def __post_init__(self):
        vals = astuple(self)
        if not all(math.isfinite(v) for v in vals):
            raise DomainError(f"non-finite FPLD parameter in {vals}")
        if self.lambda2 <= 0:
            raise DomainError(f"lambda2 must be positive, got {self.lambda2}")
        if not -1.0 <= self.lambda3 <= 1.0:
            raise DomainError(f"lambda3 must lie in [-1, 1], got {self.lambda3}")

    def as_array(self) -> np.ndarray:
        return np.array(astuple(self), dtype=float)

    def shifted(self, c: float) -> FpldNatural:
        return FpldNatural(self.lambda1 + c, *astuple(self)[1:])


@dataclass(frozen=True)
class FpldStar:
    lambda1_star: float
    lambda2_star: float
    lambda3: float
    lambda4: float
    lambda5: float

    def __post_init__(self):
        vals = astuple(self)
        if not all(math.isfinite(v) for v in vals):
            raise DomainError(f"non-finite FPLD parameter in {vals}")
        if self.lambda2_star <= 0:
            raise DomainError(f"lambda2_star must be positive, got {self.lambda2_star}")
        if not -1.0 <= self.lambda3 <= 1.0:
            raise DomainError(f"lambda3 must lie in [-1, 1], got {self.lambda3}")

    def as_array(self) -> np.ndarray:
        return np.array(astuple(self), dtype=float)


@dataclass(frozen=True)
class FpldUnconstrained:
    tilde1: float
    tilde2: float
    tilde3: float
    tilde4: float
    tilde5: float

    def as_array(self) -> np.ndarray:
        return np.array(astuple(self), dtype=float)


@dataclass(frozen=True)
class GpdParams:
    mu: float
    eta: float
    xi: float

    def __post_init__(self):
        if not self.eta > 0:
            raise DomainError(f"GPD scale must be positive, got {self.eta}")


@dataclass(frozen=True)
class SupportInterval:
    lower: float
    upper: float

    def __contains__(self, y) -> bool:
        return self.lower < y < self.upper


AnyFpld = Union[FpldNatural, FpldStar]


def natural(params: AnyFpld) -> FpldNatural:
    """Return ``params`` in the natural parametrisation."""
    if isinstance(params, FpldNatural):
        return params
    if isinstance(params, FpldStar):
        return from_star(params)
    raise TypeError(f"expected FPLD parameters, got {type(params).__name__}")


# --------------------------------------------------------------------------
# closed-form building blocks


def _boxcox(logx, lam: float):
    """(x**lam - 1)/lam evaluated from log(x), with the log limit at lam = 0."""
    if abs(lam) < LIMIT_THRESHOLD:
        return logx
    with np.errstate(over="ignore", invalid="ignore"):
        return np.expm1(lam * logx) / lam


def _boxcox_pow(logx, lam: float):
    """Return ((x**lam - 1)/lam, x**lam) from log(x)."""
    if abs(lam) < LIMIT_THRESHOLD:
        return logx, np.ones_like(logx)
    e = np.expm1(lam * logx)
    return e / lam, e + 1.0


def _q_pq(lam: np.ndarray, logp, logq):
    """Quantile from log(p) and log(1 - p); both are passed to keep precision near 1."""
    l1, l2, l3, l4, l5 = lam
    return l1 + 0.5 * l2 * ((1.0 - l3) * _boxcox(logp, l4) - (1.0 + l3) * _boxcox(logq, l5))


def _logs(p):
    with np.errstate(divide="ignore"):
        return np.log(p), np.log1p(-p)


def _check_prob(p):
    p = np.asarray(p, dtype=float)
    if np.any(np.isnan(p)) or np.any((p < 0) | (p > 1)):
        raise DomainError("probabilities must lie in [0, 1]")
    return p


def quantile(params: AnyFpld, p):
    """FPLD quantile function.

    Works on scalars and arrays. At p = 0 (p = 1) an infinite lower (upper)
    support endpoint is returned as -inf (+inf).
    """
    lam = natural(params).as_array()
    p = _check_prob(p)
    logp, logq = _logs(p)
    out = _q_pq(lam, logp, logq)
    return float(out) if out.ndim == 0 else out


def _qdens_pq(lam: np.ndarray, p, q):
    l1, l2, l3, l4, l5 = lam
    with np.errstate(divide="ignore", over="ignore"):
        return 0.5 * l2 * ((1.0 - l3) * p ** (l4 - 1.0) + (1.0 + l3) * q ** (l5 - 1.0))


def quantile_density(params: AnyFpld, p):
    """Derivative dQ/dp of the quantile function on the open interval (0, 1)."""
    lam = natural(params).as_array()
    p = _check_prob(p)
    if np.any((p <= 0) | (p >= 1)):
        raise DomainError("quantile density is defined for 0 < p < 1 only")
    out = _qdens_pq(lam, p, 1.0 - p)
    return float(out) if out.ndim == 0 else out


def support(params: AnyFpld) -> SupportInterval:
    l1, l2, l3, l4, l5 = natural(params).as_array()
    lower = l1 - l2 * (1.0 - l3) / (2.0 * l4) if l4 > 0 else -math.inf
    upper = l1 + l2 * (1.0 + l3) / (2.0 * l5) if l5 > 0 else math.inf
    return SupportInterval(lower, upper)


def has_positive_support(params: AnyFpld) -> bool:
    lam = natural(params)
    return lam.lambda4 > 0 and support(lam).lower > 0


# --------------------------------------------------------------------------
# CDF by safeguarded Newton iteration in logit space


def _q_of_t(lam, t):
    """Quantile at p = expit(t), returning (Q, p, 1 - p)."""
    return _q_pq(lam, log_expit(t), log_expit(-t)), expit(t), expit(-t)


@numba.njit(cache=True)
def _bc_pow(logx, lam):
    if abs(lam) < LIMIT_THRESHOLD:
        return logx, 1.0
    e = math.expm1(lam * logx)
    return e / lam, e + 1.0


@numba.njit(cache=True)
def _cdf_kernel(lam, y, t_grid, q_grid, out, max_iter):
    l1, l2, l3, l4, l5 = lam[0], lam[1], lam[2], lam[3], lam[4]
    c4 = 0.5 * l2 * (1.0 - l3)
    c5 = 0.5 * l2 * (1.0 + l3)
    m = len(t_grid)
    for i in range(len(y)):
        yi = y[i]
        k = np.searchsorted(q_grid, yi, side="right")
        if k == 0:
            out[i] = 1.0 / (1.0 + math.exp(-t_grid[0]))
            continue
        if k >= m:
            out[i] = 1.0 / (1.0 + math.exp(-t_grid[m - 1]))
            continue
        t_lo = t_grid[k - 1]
        t_hi = t_grid[k]
        w = q_grid[k] - q_grid[k - 1]
        frac = (yi - q_grid[k - 1]) / w if w > 0 and math.isfinite(w) else 0.5
        frac = min(max(frac, 0.0), 1.0)
        t = t_lo + frac * (t_hi - t_lo)
        for _ in range(max_iter):
            e = math.exp(-abs(t))
            l1pe = math.log1p(e)
            if t >= 0:
                logp, logq = -l1pe, -t - l1pe
                p, q = 1.0 / (1.0 + e), e / (1.0 + e)
            else:
                logp, logq = t - l1pe, -l1pe
                p, q = e / (1.0 + e), 1.0 / (1.0 + e)
            b4, pw4 = _bc_pow(logp, l4)
            b5, pw5 = _bc_pow(logq, l5)
            resid = l1 + c4 * b4 - c5 * b5 - yi
            if resid == 0.0:
                break
            if resid < 0:
                t_lo = t
            else:
                t_hi = t
            slope = c4 * pw4 * q + c5 * pw5 * p
            t_new = t - resid / slope
            scale = max(1.0, abs(t))
            # quadratic convergence: once a Newton step is this small the next
            # iterate is exact to rounding
            if math.isfinite(t_new) and abs(t_new - t) <= 1e-7 * scale \
                    and t_lo <= t_new <= t_hi:
                t = t_new
                break
            if not (t_lo < t_new < t_hi) or not math.isfinite(t_new):
                t_new = 0.5 * (t_lo + t_hi)
            t = t_new
            if t_hi - t_lo <= 1e-15 * scale:
                break
        out[i] = 1.0 / (1.0 + math.exp(-t))


def _cdf_array(lam: np.ndarray, y: np.ndarray, lower: float, upper: float) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    out = np.empty_like(y)
    below = y <= lower
    above = y >= upper
    out[below] = 0.0
    out[above] = 1.0
    inside = ~(below | above)
    if not np.any(inside):
        return out
    q_grid, _, _ = _q_of_t(lam, _T_GRID)
    q_grid = np.maximum.accumulate(np.where(np.isnan(q_grid), -np.inf, q_grid))
    res = np.empty(int(inside.sum()))
    _cdf_kernel(np.asarray(lam, dtype=float), y[inside], _T_GRID, q_grid, res, CDF_MAX_ITER)
    out[inside] = res
    return out


def cdf(params: AnyFpld, y):
    """Distribution function, obtained by inverting the quantile function numerically.

    The root of ``Q(p) = y`` is found by Newton's method on the logit of p,
    bracketed by a coarse grid and falling back to bisection whenever a
    Newton step leaves the bracket.
    """
    lam = natural(params)
    y_arr = np.asarray(y, dtype=float)
    if not np.all(np.isfinite(y_arr)):
        raise DomainError("cdf requires finite arguments")
    s = support(lam)
    out = _cdf_array(lam.as_array(), np.atleast_1d(y_arr), s.lower, s.upper)
    return float(out[0]) if y_arr.ndim == 0 else out.reshape(y_arr.shape)


def density(params: AnyFpld, y):
    """Probability density; zero outside the support."""
    lam = natural(params)
    y_arr = np.atleast_1d(np.asarray(y, dtype=float))
    s = support(lam)
    out = np.zeros_like(y_arr)
    inside = (y_arr > s.lower) & (y_arr < s.upper)
    if np.any(inside):
        p = _cdf_array(lam.as_array(), y_arr[inside], s.lower, s.upper)
        with np.errstate(divide="ignore"):
            out[inside] = 1.0 / _qdens_pq(lam.as_array(), p, 1.0 - p)
    out[~np.isfinite(out)] = 0.0
    return float(out[0]) if np.ndim(y) == 0 else out.reshape(np.shape(y))


# --------------------------------------------------------------------------
# reparametrisations


def _median_iqr_coefs(l3: float, l4: float, l5: float) -> tuple[float, float]:
    """Median offset and IQR of the FPLD with l1 = 0 and l2 = 1."""
    log = math.log
    med = 0.5 * ((1 - l3) * _boxcox(log(0.5), l4) - (1 + l3) * _boxcox(log(0.5), l5))
    iqr = 0.5 * ((1 - l3) * (_boxcox(log(0.75), l4) - _boxcox(log(0.25), l4))
                 + (1 + l3) * (_boxcox(log(0.75), l5) - _boxcox(log(0.25), l5)))
    return float(med), float(iqr)


def to_star(params: FpldNatural) -> FpldStar:
    l1, l2, l3, l4, l5 = params.as_array()
    med, iqr = _median_iqr_coefs(l3, l4, l5)
    return FpldStar(l1 + l2 * med, l2 * iqr, l3, l4, l5)


def from_star(params: FpldStar) -> FpldNatural:
    s1, s2, l3, l4, l5 = params.as_array()
    if s2 <= 0:
        raise DomainError("lambda2_star must be positive")
    med, iqr = _median_iqr_coefs(l3, l4, l5)
    l2 = s2 / iqr
    return FpldNatural(s1 - l2 * med, l2, l3, l4, l5)


def _g(x: float) -> float:
    """log(exp(x) - 1), stable for all x > 0."""
    return x + math.log(-math.expm1(-x))


def _g_inv(t: float) -> float:
    """Softplus, the inverse of ``_g``."""
    return float(np.logaddexp(0.0, t))


def to_unconstrained(params: FpldStar) -> FpldUnconstrained:
    s1, s2, l3, l4, l5 = params.as_array()
    if not (s2 > 0 and -1 < l3 < 1 and l4 > 0 and l5 > -0.5):
        raise DomainError(f"parameters outside the optimiser domain: {params}")
    return FpldUnconstrained(s1, _g(s2), -2.0 * math.atanh(l3), _g(l4), _g(l5 + 0.5))


def from_unconstrained(x: FpldUnconstrained) -> FpldStar:
    t1, t2, t3, t4, t5 = x.as_array()
    return FpldStar(t1, _g_inv(t2), -math.tanh(0.5 * t3), _g_inv(t4), _g_inv(t5) - 0.5)


def star_from_vector(x) -> FpldStar:
    """Map an unconstrained optimiser vector straight to star parameters."""
    return from_unconstrained(FpldUnconstrained(*map(float, x)))


@numba.njit(cache=True)
def _softplus(t):
    return max(t, 0.0) + math.log1p(math.exp(-abs(t)))


@numba.njit(cache=True)
def _bc_scalar(logx, lam):
    if abs(lam) < 1e-10:
        return logx
    return math.expm1(lam * logx) / lam


@numba.njit(cache=True)
def _vector_to_natural(x):
    """Optimiser vector to (star, natural) arrays without object overhead; NaN on failure."""
    star = np.empty(5)
    lam = np.empty(5)
    star[0] = x[0]
    star[1] = _softplus(x[1])
    star[2] = -math.tanh(0.5 * x[2])
    star[3] = _softplus(x[3])
    star[4] = _softplus(x[4]) - 0.5
    l3, l4, l5 = star[2], star[3], star[4]
    lh, l1q, l3q = math.log(0.5), math.log(0.25), math.log(0.75)
    med = 0.5 * ((1 - l3) * _bc_scalar(lh, l4) - (1 + l3) * _bc_scalar(lh, l5))
    iqr = 0.5 * ((1 - l3) * (_bc_scalar(l3q, l4) - _bc_scalar(l1q, l4))
                 + (1 + l3) * (_bc_scalar(l3q, l5) - _bc_scalar(l1q, l5)))
    if not (iqr > 0) or not (star[1] > 0):
        lam[:] = np.nan
        return star, lam
    lam[1] = star[1] / iqr
    lam[0] = star[0] - lam[1] * med
    lam[2], lam[3], lam[4] = l3, l4, l5
    return star, lam


# --------------------------------------------------------------------------
# sampling and the GPD construction


def sample(params: AnyFpld, n: int, seed=None) -> np.ndarray:
    """Draw ``n`` variates by inverse transform with a seeded generator."""
    if n < 1:
        raise DomainError("sample size must be at least 1")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    u = rng.random(n)
    u[u == 0.0] = np.nextafter(0.0, 1.0)
    return quantile(params, u)


def gpd_quantile(params: GpdParams, p):
    p = _check_prob(p)
    with np.errstate(divide="ignore"):
        logq = np.log1p(-p)
    xi = params.xi
    if abs(xi) < LIMIT_THRESHOLD:
        out = params.mu - params.eta * logq
    else:
        out = params.mu - params.eta * np.expm1(xi * logq) / xi
    return float(out) if np.ndim(out) == 0 else out


def reflected_gpd_quantile(params: GpdParams, p):
    """Quantile of ``mu - X`` with X a GPD of location 0.

    Equal to ``mu - Q_X(1 - p)``, evaluated from log(p) so that small p
    keeps full precision.
    """
    p = _check_prob(p)
    with np.errstate(divide="ignore"):
        logp = np.log(p)
    xi = params.xi
    if abs(xi) < LIMIT_THRESHOLD:
        out = params.mu + params.eta * logp
    else:
        out = params.mu + params.eta * np.expm1(xi * logp) / xi
    return float(out) if np.ndim(out) == 0 else out


def fpld_from_gpd_pair(max_tail: GpdParams, min_tail: GpdParams, a: float) -> FpldNatural:
    """FPLD for the range between a GPD maximum and a reflected GPD minimum.

    The minimum's probability is linked through ``p_min = p**a``. With
    ``eta2* = a * eta2`` and ``xi2* = a * xi2`` the range quantile
    ``gpd_quantile(max_tail, p) + reflected_gpd_quantile(min_tail, p**a)`` is

        mu1 + mu2 + eta1 * (1 - (1-p)**xi1)/xi1 + eta2* * (p**xi2* - 1)/xi2*

    which is an FPLD with l1 = mu1 + mu2, l2 = eta1 + eta2*,
    l3 = (eta1 - eta2*)/(eta1 + eta2*), l4 = xi2*, l5 = xi1.
    """
    if not a > 0:
        raise DomainError("probability-linking exponent must be positive")
    eta2s = a * min_tail.eta
    l2 = max_tail.eta + eta2s
    l3 = (max_tail.eta - eta2s) / l2
    return FpldNatural(max_tail.mu + min_tail.mu, l2, l3, a * min_tail.xi, max_tail.xi)


# --------------------------------------------------------------------------
# serialisation

_KINDS = {"natural": FpldNatural, "star": FpldStar, "unconstrained": FpldUnconstrained}


def params_to_dict(params) -> dict:
    for kind, cls in _KINDS.items():
        if isinstance(params, cls):
            return {"parametrisation": kind, "values": [float(v) for v in astuple(params)]}
    raise TypeError(f"cannot serialise {type(params).__name__}")


def params_from_dict(obj: dict):
    try:
        cls = _KINDS[obj["parametrisation"]]
        values = [float(v) for v in obj["values"]]
    except (KeyError, TypeError, ValueError) as exc:
        raise DomainError(f"malformed parameter object: {obj!r}") from exc
    if len(values) != 5:
        raise DomainError(f"expected 5 parameter values, got {len(values)}")
    return cls(*values)


def params_to_json(params) -> str:
    return json.dumps(params_to_dict(params))


def params_from_json(text: str):
    return params_from_dict(json.loads(text))
