"""Linear quantile regression on a probability grid and the two-step
distributional fit: predict conditional quantiles at a new location, then fit
the FPLD to them by the method of quantiles."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import optimize

from .core import DomainError
from .estimation import FitConfig, FitResult, QuantileSet, _replace, fit_mq

BUNDLE_PROBABILITIES = np.arange(1, 100) / 100.0


@dataclass(frozen=True)
class Standardization:
    names: tuple
    means: np.ndarray
    sds: np.ndarray

    def apply(self, raw) -> np.ndarray:
        raw = np.asarray(raw, dtype=float)
        return (raw - self.means) / self.sds

    def to_dict(self) -> dict:
        return {"names": list(self.names), "means": self.means.tolist(), "sds": self.sds.tolist()}

    @classmethod
    def from_dict(cls, obj: dict) -> "Standardization":
        return cls(tuple(obj["names"]), np.asarray(obj["means"], float), np.asarray(obj["sds"], float))


@dataclass(frozen=True)
class Design:
    """Intercept column followed by the standardized covariates."""

    X: np.ndarray
    y: np.ndarray
    standardization: Standardization

    def __post_init__(self):
        if self.X.ndim != 2 or self.X.shape[0] != len(self.y):
            raise DomainError("design matrix and response disagree in length")
        if not (np.all(np.isfinite(self.X)) and np.all(np.isfinite(self.y))):
            raise DomainError("design contains non-finite entries")

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def k(self) -> int:
        return self.X.shape[1] - 1


@dataclass(frozen=True)
class QuantileFit:
    p: float
    beta: np.ndarray


@dataclass
class QuantileFitBundle:
    fits: list
    standardization: Standardization
    metadata: dict = field(default_factory=dict)

    @property
    def probabilities(self) -> np.ndarray:
        return np.array([f.p for f in self.fits])

    @property
    def coefficients(self) -> np.ndarray:
        return np.vstack([f.beta for f in self.fits])

    def to_dict(self) -> dict:
        return {
            "probabilities": self.probabilities.tolist(),
            "coefficients": self.coefficients.tolist(),
            "covariates": list(self.standardization.names),
            "standardization": self.standardization.to_dict(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, obj: dict) -> "QuantileFitBundle":
        fits = [QuantileFit(float(p), np.asarray(b, float))
                for p, b in zip(obj["probabilities"], obj["coefficients"])]
        return cls(fits, Standardization.from_dict(obj["standardization"]))


def standardize(raw, y, names: Optional[Sequence[str]] = None) -> tuple[Design, Standardization]:
    """Centre and scale each covariate column (sample sd) and prepend an intercept.

    ``raw`` may be None for an intercept-only design.
    """
    y = np.asarray(y, dtype=float)
    raw = np.empty((len(y), 0)) if raw is None else np.asarray(raw, dtype=float)
    if raw.ndim == 1:
        raw = raw[:, None]
    k = raw.shape[1]
    names = tuple(names) if names is not None else tuple(f"x{j + 1}" for j in range(k))
    if len(names) != k:
        raise DomainError("one name per covariate column")
    if raw.shape[0] < 2:
        raise DomainError("need at least two rows to standardize")
    means = raw.mean(axis=0)
    sds = raw.std(axis=0, ddof=1)
    for name, sd in zip(names, sds):
        if not sd > 0:
            raise DomainError(f"covariate {name!r} has zero variance")
    record = Standardization(names, means, sds)
    X = np.column_stack([np.ones(raw.shape[0]), record.apply(raw)])
    return Design(X, y, record), record


def check_loss(residuals, p: float) -> float:
    u = np.asarray(residuals, dtype=float)
    return float(np.sum(u * (p - (u < 0))))


def _step_bound(v, dv):
    with np.errstate(divide="ignore", invalid="ignore"):
        return float(np.min(np.where(dv < 0, -v / dv, 1e20)))


def _interior_point(X: np.ndarray, y: np.ndarray, p: float, tol: float = 1e-7,
                    max_iter: int = 100) -> np.ndarray:
    """Frisch-Newton primal-dual interior point on the bounded dual.

    Works on max y'a subject to X'a = (1 - p) X'1, 0 <= a <= 1, with a
    Mehrotra predictor-corrector step; returns approximate coefficients.
    """
    n = len(y)
    A, c = X.T, -y
    b = (1 - p) * X.sum(axis=0)
    x = np.full(n, 1 - p)
    s = 1.0 - x
    dual = np.linalg.lstsq(X, c, rcond=None)[0]
    r = c - X @ dual
    r = r + 0.001 * (r == 0)
    z = np.maximum(r, 0.0)
    w = z - r
    beta = 0.99995
    gap = c @ x - dual @ b + w.sum()
    for _ in range(max_iter):
        if gap <= tol * max(1.0, abs(c @ x)):
            break
        q = 1.0 / (z / x + w / s)
        r = z - w
        AQ = A * q
        AQA = AQ @ X
        rhs = AQ @ r
        dy = np.linalg.solve(AQA, rhs)
        dx = q * (X @ dy - r)
        ds = -dx
        dz = -z * (dx / x + 1)
        dw = -w * (ds / s + 1)
        fp = min(beta * min(_step_bound(x, dx), _step_bound(s, ds)), 1.0)
        fd = min(beta * min(_step_bound(w, dw), _step_bound(z, dz)), 1.0)
        if min(fp, fd) < 1:
            mu = z @ x + w @ s
            g = (z + fd * dz) @ (x + fp * dx) + (w + fd * dw) @ (s + fp * ds)
            mu = mu * (g / mu) ** 3 / (2 * n)
            dxdz, dsdw = dx * dz, ds * dw
            xinv, sinv = 1.0 / x, 1.0 / s
            xi = mu * (xinv - sinv)
            rhs = rhs + AQ @ (dxdz - dsdw - xi)
            dy = np.linalg.solve(AQA, rhs)
            dx = q * (X @ dy + xi - r - dxdz + dsdw)
            ds = -dx
            dz = mu * xinv - z - xinv * z * dx - dxdz
            dw = mu * sinv - w - sinv * w * ds - dsdw
            fp = min(beta * min(_step_bound(x, dx), _step_bound(s, ds)), 1.0)
            fd = min(beta * min(_step_bound(w, dw), _step_bound(z, dz)), 1.0)
        x, s = x + fp * dx, s + fp * ds
        dual, w, z = dual + fd * dy, w + fd * dw, z + fd * dz
        gap = c @ x - dual @ b + w.sum()
    return -dual


def _vertex(X: np.ndarray, y: np.ndarray, p: float, beta: np.ndarray,
            tol: float = 1e-9) -> Optional[np.ndarray]:
    """Exact basic solution near ``beta``, or None when it cannot be certified optimal.

    The k + 1 observations with the smallest residuals that give a
    nonsingular basis are interpolated; the result is optimal iff the dual
    weights of the basic observations lie in [0, 1].
    """
    n, m = X.shape
    order = np.argsort(np.abs(y - X @ beta), kind="stable")
    basis = []
    for i in order[:max(50 * m, 500)]:
        if np.linalg.matrix_rank(X[basis + [i]]) == len(basis) + 1:
            basis.append(int(i))
            if len(basis) == m:
                break
    if len(basis) < m:
        return None
    Xh = X[basis]
    beta_h = np.linalg.solve(Xh, y[basis])
    r = y - X @ beta_h
    r[basis] = 0.0
    scale = tol * max(1.0, float(np.max(np.abs(y))))
    rest = np.ones(n, dtype=bool)
    rest[basis] = False
    if np.any(np.abs(r[rest]) <= scale):
        return None
    a = (r > 0).astype(float)
    target = (1 - p) * X.sum(axis=0) - X[rest].T @ a[rest]
    a_h = np.linalg.solve(Xh.T, target)
    if np.all((a_h >= -1e-9) & (a_h <= 1 + 1e-9)):
        return beta_h
    return None


def fit_quantile_regression(design: Design, p: float) -> QuantileFit:
    """Minimise the check loss exactly.

    An interior-point solve is rounded to the nearest basic solution, which
    interpolates k + 1 observations and is certified optimal by its dual
    weights. When certification fails the bounded dual LP is solved by HiGHS;
    the coefficients are minus its equality marginals.
    """
    if not 0 < p < 1:
        raise DomainError("probability must lie in (0, 1)")
    n, m = design.X.shape
    if n <= m:
        raise DomainError("need more rows than coefficients")
    if np.linalg.matrix_rank(design.X) < m:
        raise DomainError("design matrix is rank deficient")
    X, y = design.X, design.y
    beta = _vertex(X, y, p, _interior_point(X, y, p))
    if beta is None:
        res = optimize.linprog(-y, A_eq=X.T, b_eq=(1 - p) * X.sum(axis=0),
                               bounds=(0, 1), method="highs")
        if res.status != 0:
            raise RuntimeError(f"quantile regression at p={p} failed: {res.message}")
        beta = -np.asarray(res.eqlin.marginals)
    return QuantileFit(float(p), np.asarray(beta))


def fit_bundle(design: Design, probabilities=BUNDLE_PROBABILITIES) -> QuantileFitBundle:
    fits = [fit_quantile_regression(design, float(p)) for p in probabilities]
    return QuantileFitBundle(fits, design.standardization)


def predict_quantiles(bundle: QuantileFitBundle, x0) -> QuantileSet:
    """Predicted quantiles at raw covariates ``x0``, rearranged to be nondecreasing."""
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    if not np.all(np.isfinite(x0)):
        raise DomainError("prediction point must be finite")
    xt = np.concatenate([[1.0], bundle.standardization.apply(x0)])
    q = bundle.coefficients @ xt
    return QuantileSet(bundle.probabilities, np.sort(q))


def distributional_fit(bundle: QuantileFitBundle, x0, cfg: Optional[FitConfig] = None) -> FitResult:
    """FPLD fitted by MQ to the predicted quantiles at ``x0``.

    Only quantiles reach this step, so the data-bracket constraints are
    always off; positivity follows ``cfg`` and is on by default.
    """
    if cfg is None:
        cfg = FitConfig(enforce_positive_support=True)
    cfg = _replace(cfg, estimator="mq", data_bracket_constraints=False)
    return fit_mq(predict_quantiles(bundle, x0), cfg)
