"""Marginal estimators for the FPLD: method of quantiles, maximum likelihood and
the starship method, plus gamma and lognormal baselines.

All FPLD estimators share the same machinery: a grid search over the three
shape parameters for the starting value, followed by derivative-free
Nelder-Mead minimisation in unconstrained coordinates, wrapped in an
augmented Lagrangian loop that handles the inequality constraints.
"""

from __future__ import annotations

import itertools
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import optimize, special

from .core import (
    DomainError,
    FpldNatural,
    FpldStar,
    _boxcox,
    _cdf_array,
    _median_iqr_coefs,
    from_star,
    _vector_to_natural,
    star_from_vector,
    to_unconstrained,
)

ESTIMATORS = ("mq", "ml", "starship")

LAMBDA3_GRID = (-0.5, -0.25, 0.0, 0.25, 0.5)
LAMBDA4_GRID = (0.1, 0.2, 0.4, 0.8, 1.0, 1.5)
LAMBDA5_GRID = (-0.4, -0.1, 0.1, 0.2, 0.4, 0.8, 1.0, 1.5)

AD_EPS = 1e-12
STALL_ITERATIONS = 40
_INFEASIBLE = 1e12


@dataclass(frozen=True)
class QuantileSet:
    """Probability/value pairs with strictly increasing probabilities in (0, 1)."""

    p: np.ndarray
    q: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.p, dtype=float)
        q = np.asarray(self.q, dtype=float)
        if p.ndim != 1 or p.shape != q.shape or len(p) == 0:
            raise DomainError("quantile set needs two equal-length 1-d arrays")
        if np.any((p <= 0) | (p >= 1)) or np.any(np.diff(p) <= 0):
            raise DomainError("probabilities must be strictly increasing inside (0, 1)")
        if not np.all(np.isfinite(q)) or np.any(np.diff(q) < 0):
            raise DomainError("quantile values must be finite and nondecreasing")
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "q", q)

    def __len__(self):
        return len(self.p)

    @property
    def pairs(self) -> list[tuple[float, float]]:
        return list(zip(self.p.tolist(), self.q.tolist()))

    def value_at(self, prob: float) -> float:
        return float(np.interp(prob, self.p, self.q))


@dataclass(frozen=True)
class FitConfig:
    estimator: str = "mq"
    enforce_positive_support: bool = False
    positive_support_probability: float = 1e-4
    data_bracket_constraints: bool = True
    ftol: float = 1e-8
    xtol: float = 1e-5
    max_evaluations: int = 5000
    initial_step: float = 0.1
    penalty0: float = 10.0
    penalty_growth: float = 10.0
    max_outer: int = 20
    constraint_tol: float = 1e-8
    restarts: int = 2
    lambda3_grid: tuple = LAMBDA3_GRID
    lambda4_grid: tuple = LAMBDA4_GRID
    lambda5_grid: tuple = LAMBDA5_GRID
    fixed_lambda3: Optional[float] = None
    thin: Optional[int] = None

    def __post_init__(self):
        if self.estimator not in ESTIMATORS:
            raise DomainError(f"unknown estimator {self.estimator!r}")
        if min(self.ftol, self.xtol, self.constraint_tol, self.initial_step) <= 0:
            raise DomainError("tolerances must be positive")
        if self.max_evaluations < 1 or self.max_outer < 1:
            raise DomainError("evaluation limits must be positive")
        if not (self.lambda3_grid and self.lambda4_grid and self.lambda5_grid):
            raise DomainError("initialisation grids must be nonempty")
        if not 0 < self.positive_support_probability < 1:
            raise DomainError("positive_support_probability must lie in (0, 1)")


@dataclass
class FitResult:
    params: FpldStar
    loss: float
    converged: bool
    evaluations: int
    elapsed: float
    constraint_slack: dict = field(default_factory=dict)
    estimator: str = "mq"
    init: Optional[FpldStar] = None
    init_loss: float = math.nan

    @property
    def natural(self) -> FpldNatural:
        return from_star(self.params)

    def to_dict(self) -> dict:
        return {
            "estimator": self.estimator,
            "params": {"parametrisation": "star", "values": self.params.as_array().tolist()},
            "loss": self.loss,
            "converged": self.converged,
            "evaluations": self.evaluations,
            "elapsed_ms": 1000.0 * self.elapsed,
            "constraint_slack": dict(self.constraint_slack),
        }


# --------------------------------------------------------------------------
# objectives


def empirical_quantiles(y) -> QuantileSet:
    """Order statistics paired with plotting positions (i - 0.5)/n."""
    y = np.sort(np.asarray(y, dtype=float))
    n = len(y)
    if n < 2:
        raise DomainError("need at least two observations")
    return QuantileSet((np.arange(1, n + 1) - 0.5) / n, y)


class _QuantileTargets:
    """Pre-computed logs of the target probabilities for fast loss evaluation."""

    def __init__(self, qs: QuantileSet):
        self.q = qs.q
        self.logp = np.log(qs.p)
        self.logq = np.log1p(-qs.p)

    def model(self, lam: np.ndarray) -> np.ndarray:
        l1, l2, l3, l4, l5 = lam
        return l1 + 0.5 * l2 * ((1 - l3) * _boxcox(self.logp, l4) - (1 + l3) * _boxcox(self.logq, l5))

    def loss(self, lam: np.ndarray) -> float:
        return float(np.sum(np.abs(self.q - self.model(lam))))


def mq_loss(params: FpldStar, qs: QuantileSet) -> float:
    """Summed absolute distance between target and model quantiles."""
    return _QuantileTargets(qs).loss(from_star(params).as_array())


def _natural_array(star: np.ndarray) -> np.ndarray:
    s1, s2, l3, l4, l5 = star
    med, iqr = _median_iqr_coefs(l3, l4, l5)
    l2 = s2 / iqr
    return np.array([s1 - l2 * med, l2, l3, l4, l5])


def _support_arr(lam: np.ndarray) -> tuple[float, float]:
    l1, l2, l3, l4, l5 = lam
    lower = l1 - l2 * (1 - l3) / (2 * l4) if l4 > 0 else -math.inf
    upper = l1 + l2 * (1 + l3) / (2 * l5) if l5 > 0 else math.inf
    return lower, upper


def _loglik_arr(lam: np.ndarray, y: np.ndarray) -> float:
    lower, upper = _support_arr(lam)
    if y[0] <= lower or y[-1] >= upper:
        return -math.inf
    p = _cdf_array(lam, y, lower, upper)
    l1, l2, l3, l4, l5 = lam
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        inner = (1 - l3) * p ** (l4 - 1) + (1 + l3) * (1 - p) ** (l5 - 1)
        val = len(y) * (math.log(2.0) - math.log(l2)) - np.sum(np.log(inner))
    return float(val) if np.isfinite(val) else -math.inf


def log_likelihood(params, y) -> float:
    """FPLD log-likelihood; -inf when any observation falls outside the support."""
    lam = (from_star(params) if isinstance(params, FpldStar) else params).as_array()
    return _loglik_arr(lam, np.sort(np.asarray(y, dtype=float)))


def anderson_darling(u) -> float:
    """Anderson-Darling distance of ``u`` from the standard uniform."""
    u = np.sort(np.clip(np.asarray(u, dtype=float), AD_EPS, 1 - AD_EPS))
    n = len(u)
    if n == 0:
        raise DomainError("empty sample")
    i = np.arange(1, n + 1)
    return float(-n - np.sum((2 * i - 1) * (np.log(u) + np.log1p(-u[::-1]))) / n)


# --------------------------------------------------------------------------
# initial values


def _grid_points(cfg: FitConfig):
    l3s = (cfg.fixed_lambda3,) if cfg.fixed_lambda3 is not None else cfg.lambda3_grid
    return list(itertools.product(l3s, cfg.lambda4_grid, cfg.lambda5_grid))


def _location_scale(qs: QuantileSet) -> tuple[float, float]:
    med = qs.value_at(0.5)
    iqr = qs.value_at(0.75) - qs.value_at(0.25)
    if iqr <= 0:
        iqr = float(qs.q[-1] - qs.q[0])
    if iqr <= 0:
        iqr = 1.0
    return med, iqr


def grid_losses(qs: QuantileSet, cfg: FitConfig = FitConfig()) -> list[tuple[FpldStar, float]]:
    """Quantile loss at every grid point, in grid order."""
    med, iqr = _location_scale(qs)
    targets = _QuantileTargets(qs)
    out = []
    for l3, l4, l5 in _grid_points(cfg):
        star = FpldStar(med, iqr, l3, l4, l5)
        out.append((star, targets.loss(_natural_array(star.as_array()))))
    return out


def grid_search_init(qs: QuantileSet, cfg: FitConfig = FitConfig()) -> FpldStar:
    """Median/IQR start with the shape parameters chosen on a coarse grid."""
    losses = grid_losses(qs, cfg)
    return min(losses, key=lambda item: item[1])[0]


def _covering_init(y: np.ndarray, cfg: FitConfig) -> FpldStar:
    """Best grid start whose support contains every observation.

    Likelihood-type objectives are infinite outside the support, so the
    simplex needs a finite starting value. When no grid point covers the
    data, the scale of the best one is widened until it does.
    """
    ranked = sorted(grid_losses(empirical_quantiles(y), cfg), key=lambda item: item[1])
    for star, _ in ranked:
        lower, upper = _support_arr(_natural_array(star.as_array()))
        if lower < y[0] and y[-1] < upper:
            return star
    star = ranked[0][0].as_array()
    for _ in range(60):
        star[1] *= 1.5
        lower, upper = _support_arr(_natural_array(star))
        if lower < y[0] and y[-1] < upper:
            break
    return FpldStar(*star)


# --------------------------------------------------------------------------
# augmented Lagrangian with Nelder-Mead inner solves


class _Problem:
    """Objective and inequality constraints g(x) <= 0 in unconstrained coordinates."""

    def __init__(self, objective: Callable, constraints: Sequence[tuple[str, Callable]],
                 fixed_lambda3: Optional[float]):
        self.objective = objective
        self.constraints = list(constraints)
        self.fixed_lambda3 = fixed_lambda3
        self.nfev = 0

    def full(self, x: np.ndarray) -> np.ndarray:
        if self.fixed_lambda3 is None:
            return x
        t3 = -2.0 * math.atanh(self.fixed_lambda3)
        return np.array([x[0], x[1], t3, x[2], x[3]])

    def reduce(self, x: np.ndarray) -> np.ndarray:
        if self.fixed_lambda3 is None:
            return np.asarray(x, dtype=float)
        return np.array([x[0], x[1], x[3], x[4]])

    def star_array(self, x: np.ndarray) -> np.ndarray:
        return star_from_vector(self.full(x)).as_array()

    def evaluate(self, x: np.ndarray) -> tuple[float, np.ndarray]:
        self.nfev += 1
        _, lam = _vector_to_natural(self.full(np.asarray(x, dtype=float)))
        if not np.all(np.isfinite(lam)) or lam[1] <= 0:
            return _INFEASIBLE, np.full(len(self.constraints), _INFEASIBLE)
        f = self.objective(lam)
        g = np.array([c(lam) for _, c in self.constraints], dtype=float)
        return f, g


def _augmented(f: float, g: np.ndarray, mult: np.ndarray, rho: float) -> float:
    if len(g) == 0:
        return f
    shifted = np.maximum(0.0, g + mult / rho)
    return f + 0.5 * rho * float(np.sum(shifted ** 2 - (mult / rho) ** 2))


def _nelder_mead(fun: Callable, x0: np.ndarray, cfg: FitConfig, budget: int):
    """One simplex run; returns (x, f, nfev, converged).

    A run whose best value has stalled for many iterations is stopped early.
    It counts as converged when the simplex has also collapsed, which is what
    happens when the optimum sits on an infeasibility wall and the function
    tolerance can never be met.
    """
    dim = len(x0)
    simplex = np.vstack([x0] + [x0 + cfg.initial_step * np.eye(dim)[i] for i in range(dim)])
    state = {"best": math.inf, "since": 0}

    def stall(intermediate_result):
        f = float(intermediate_result.fun)
        best = state["best"]
        if not math.isfinite(best) or f < best - cfg.ftol * max(1.0, abs(best)):
            state["best"], state["since"] = f, 0
        else:
            state["since"] += 1
            if state["since"] >= STALL_ITERATIONS * dim:
                raise StopIteration

    res = optimize.minimize(
        fun, x0, method="Nelder-Mead", callback=stall,
        options={"initial_simplex": simplex, "fatol": cfg.ftol, "xatol": cfg.xtol,
                 "maxfev": max(budget, dim + 2), "adaptive": False},
    )
    spread = float(np.max(np.abs(res.final_simplex[0] - res.final_simplex[0][0])))
    ok = res.status == 0 or (res.status == 99 and spread <= cfg.xtol)
    return res.x, float(res.fun), int(res.nfev), ok


def _minimise(problem: _Problem, x0: np.ndarray, cfg: FitConfig, scale: float):
    """Run the augmented-Lagrangian outer loop; return (x, f, g, converged)."""
    m = len(problem.constraints)
    mult = np.zeros(m)
    rho = cfg.penalty0
    x = np.asarray(x0, dtype=float)
    converged = False
    prev_violation = math.inf
    for _outer in range(cfg.max_outer):

        def fun(z, mult=mult, rho=rho):
            f, g = problem.evaluate(z)
            return _augmented(f / scale, g, mult, rho)

        inner_ok = False
        inner_start = problem.nfev
        best = fun(x)
        for _attempt in range(cfg.restarts + 1):
            budget = cfg.max_evaluations - (problem.nfev - inner_start)
            if budget <= 0:
                break
            x_new, val, _, ok = _nelder_mead(fun, x, cfg, budget)
            improved = best - val > cfg.ftol * max(1.0, abs(best))
            if val < best or (val == best and ok):
                x, best, inner_ok = x_new, val, ok
            if not improved:
                break
        f, g = problem.evaluate(x)
        violation = float(np.max(g, initial=-math.inf))
        if m == 0:
            converged = inner_ok
            break
        new_mult = np.maximum(0.0, mult + rho * g)
        feasible = violation <= cfg.constraint_tol
        stable = np.allclose(new_mult, mult, rtol=1e-6, atol=1e-10)
        mult = new_mult
        if feasible and (stable or _outer > 0):
            converged = inner_ok
            break
        if violation > 0.25 * prev_violation:
            rho *= cfg.penalty_growth
        prev_violation = max(violation, 0.0)
    f, g = problem.evaluate(x)
    return x, f, g, converged


def _positivity(cfg: FitConfig):
    logp = math.log(cfg.positive_support_probability)
    logq = math.log1p(-cfg.positive_support_probability)

    def g(lam):
        l1, l2, l3, l4, l5 = lam
        return -(l1 + 0.5 * l2 * ((1 - l3) * _boxcox(logp, l4) - (1 + l3) * _boxcox(logq, l5)))

    return g


def _run_fit(objective: Callable, constraints: list, init: FpldStar, cfg: FitConfig,
             scale_hint: float) -> FitResult:
    start = time.perf_counter()
    problem = _Problem(objective, constraints, cfg.fixed_lambda3)
    x0 = problem.reduce(to_unconstrained(init).as_array())
    f0, _ = problem.evaluate(x0)
    scale = abs(f0) if math.isfinite(f0) and abs(f0) < _INFEASIBLE / 10 else scale_hint
    scale = max(scale, 1e-12)
    x, f, g, converged = _minimise(problem, x0, cfg, scale)
    if f >= f0 and f0 < _INFEASIBLE / 10 and np.all(problem.evaluate(x0)[1] <= cfg.constraint_tol):
        # never return something worse than a feasible starting point
        x, f = x0, f0
        g = problem.evaluate(x0)[1]
    slack = {name: float(val) for (name, _), val in zip(constraints, g)}
    feasible = all(v <= cfg.constraint_tol for v in slack.values())
    return FitResult(
        params=FpldStar(*problem.star_array(x)),
        loss=float(f),
        converged=bool(converged and feasible and f < _INFEASIBLE / 10),
        evaluations=problem.nfev,
        elapsed=time.perf_counter() - start,
        constraint_slack=slack,
        estimator=cfg.estimator,
        init=init,
        init_loss=float(f0),
    )


def _thin(qs: QuantileSet, thin: Optional[int]) -> QuantileSet:
    if not thin or thin >= len(qs):
        return qs
    idx = np.unique(np.round(np.linspace(0, len(qs) - 1, thin)).astype(int))
    return QuantileSet(qs.p[idx], qs.q[idx])


def fit_mq(qs: QuantileSet, cfg: FitConfig = FitConfig()) -> FitResult:
    """Method-of-quantiles fit to a set of quantiles."""
    if cfg.estimator != "mq":
        cfg = _replace(cfg, estimator="mq")
    targets = _QuantileTargets(_thin(qs, cfg.thin))
    constraints = []
    if cfg.data_bracket_constraints:
        lo, hi = float(qs.q[0]), float(qs.q[-1])
        constraints.append(("lower_bracket", lambda lam: _support_arr(lam)[0] - lo))
        constraints.append(("upper_bracket", lambda lam: hi - _support_arr(lam)[1]))
    if cfg.enforce_positive_support:
        constraints.append(("positive_support", _positivity(cfg)))
    init = grid_search_init(qs, cfg)
    return _run_fit(targets.loss, constraints, init, cfg, scale_hint=float(len(qs)))


def _prepare_sample(y, minimum: int = 10) -> np.ndarray:
    y = np.sort(np.asarray(y, dtype=float))
    if len(y) < minimum:
        raise DomainError(f"need at least {minimum} observations, got {len(y)}")
    if not np.all(np.isfinite(y)):
        raise DomainError("observations must be finite")
    return y


def _sample_constraints(cfg: FitConfig) -> list:
    return [("positive_support", _positivity(cfg))] if cfg.enforce_positive_support else []


def fit_ml(y, cfg: FitConfig = FitConfig(estimator="ml")) -> FitResult:
    """Maximum-likelihood fit; the density comes from the numerically inverted CDF."""
    if cfg.estimator != "ml":
        cfg = _replace(cfg, estimator="ml")
    y = _prepare_sample(y)

    def objective(lam):
        lower, upper = _support_arr(lam)
        if y[0] <= lower or y[-1] >= upper:
            # continuous penalty steering the simplex back towards feasibility
            gap = max(lower - y[0], 0.0) + max(y[-1] - upper, 0.0)
            return _INFEASIBLE * (1.0 + min(gap, 1e3))
        ll = _loglik_arr(lam, y)
        return -ll if math.isfinite(ll) else _INFEASIBLE

    init = _covering_init(y, cfg)
    return _run_fit(objective, _sample_constraints(cfg), init, cfg, scale_hint=float(len(y)))


def fit_starship(y, cfg: FitConfig = FitConfig(estimator="starship")) -> FitResult:
    """Starship fit: minimise the Anderson-Darling statistic of the PIT values."""
    if cfg.estimator != "starship":
        cfg = _replace(cfg, estimator="starship")
    y = _prepare_sample(y)

    def objective(lam):
        lower, upper = _support_arr(lam)
        return anderson_darling(_cdf_array(lam, y, lower, upper))

    init = grid_search_init(empirical_quantiles(y), cfg)
    return _run_fit(objective, _sample_constraints(cfg), init, cfg, scale_hint=1.0)


def fit(y, cfg: FitConfig = FitConfig()) -> FitResult:
    """Fit the FPLD to raw observations with the estimator named in ``cfg``."""
    if cfg.estimator == "mq":
        return fit_mq(empirical_quantiles(y), cfg)
    if cfg.estimator == "ml":
        return fit_ml(y, cfg)
    return fit_starship(y, cfg)


def _replace(cfg: FitConfig, **changes) -> FitConfig:
    return FitConfig(**{**asdict(cfg), **changes})


# --------------------------------------------------------------------------
# baselines


def _positive_sample(y) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    if len(y) < 2:
        raise DomainError("need at least two observations")
    if np.any(~np.isfinite(y)) or np.any(y <= 0):
        raise DomainError("baseline fits need strictly positive observations")
    return y


def fit_lognormal_ml(y) -> tuple[float, float]:
    """Closed-form ML estimates (meanlog, sdlog)."""
    logy = np.log(_positive_sample(y))
    return float(np.mean(logy)), float(np.sqrt(np.mean((logy - logy.mean()) ** 2)))


def fit_gamma_ml(y, tol: float = 1e-12, max_iter: int = 100) -> tuple[float, float]:
    """ML estimates (shape, rate) via Newton's method on log(a) - digamma(a) = s."""
    y = _positive_sample(y)
    mean = float(np.mean(y))
    s = math.log(mean) - float(np.mean(np.log(y)))
    if s <= 0:
        raise DomainError("gamma ML estimate does not exist for a constant sample")
    a = (3 - s + math.sqrt((s - 3) ** 2 + 24 * s)) / (12 * s)
    for _ in range(max_iter):
        step = (math.log(a) - special.digamma(a) - s) / (1 / a - special.polygamma(1, a))
        a_new = a - step
        if a_new <= 0:
            a_new = a / 2
        if abs(a_new - a) <= tol * a:
            a = a_new
            break
        a = a_new
    return float(a), float(a / mean)
