"""Ensemble BMA marginal predictive distributions.

Three kernel families are supported:

* ``gaussian`` (temperature, pressure): N(b0k + b1k x_k, sigma^2)
* ``gamma`` (wind speed): gamma with mean b0k + b1k x_k and variance c0 + c1 x_k
* ``precip`` (precipitation): a logistic point mass at zero and a gamma density
  for the cube root of the amount, mean b0k + b1k x_k^(1/3), variance c0 + c1 x_k

Bias coefficients are fitted by per-member least squares before EM; EM then
estimates the mixture weights and the variance parameters.
"""

import datetime
import logging
import math
from collections.abc import Callable
from dataclasses import dataclass, field
from functools import cached_property
from typing import ClassVar, NamedTuple

import numpy as np
import numpy.typing as npt
from scipy import optimize, special

from bmacopula import consts, models
from bmacopula.errors import DomainError, FitError
from bmacopula.numerics import (
    FloatOrArray,
    RngStream,
    bisect_increasing,
    gamma_logpdf,
    gamma_moments_to_params,
    stream_id,
)

logger = logging.getLogger(__name__)

FloatArray = npt.NDArray[np.float64]


@dataclass(frozen=True, eq=False)
class TrainingSet:
    """Forecast/observation pairs for one variable at one station."""

    variable: str
    forecasts: FloatArray
    """Ensemble member values, shape (T, K)."""
    observations: FloatArray
    """Verifying observations, shape (T,)."""
    start: datetime.date | None = None
    end: datetime.date | None = None

    def __post_init__(self) -> None:
        forecasts = np.asarray(self.forecasts, dtype=float)
        observations = np.asarray(self.observations, dtype=float)
        if forecasts.ndim != 2 or forecasts.shape[0] == 0 or forecasts.shape[1] == 0:
            raise DomainError("Training forecasts must be a non-empty (T, K) array.")
        if observations.shape != (forecasts.shape[0],):
            raise DomainError("Training observations must have one value per forecast row.")
        if not (np.all(np.isfinite(forecasts)) and np.all(np.isfinite(observations))):
            raise DomainError("Training sets must be complete (no missing values).")
        object.__setattr__(self, "forecasts", forecasts)
        object.__setattr__(self, "observations", observations)

    @property
    def n_pairs(self) -> int:
        return self.forecasts.shape[0]

    @property
    def n_members(self) -> int:
        return self.forecasts.shape[1]


@dataclass(frozen=True)
class EmTrace:
    """Convergence record of an EM fit."""

    loglik: tuple[float, ...]
    iterations: int
    converged: bool
    restarts: int = 0


def _window_payload(
    start: datetime.date | None, end: datetime.date | None, n: int
) -> models.TrainingWindowPayload:
    window: models.TrainingWindowPayload = {
        "start": start.isoformat() if start else None,
        "end": end.isoformat() if end else None,
        "n_pairs": n,
    }
    return window


def _parse_date(value: str | None) -> datetime.date | None:
    return datetime.date.fromisoformat(value) if value else None


@dataclass(frozen=True, eq=False, kw_only=True)
class _BmaModel:
    family: ClassVar[consts.KernelFamily]

    variable: str
    weights: FloatArray
    intercepts: FloatArray
    slopes: FloatArray
    trace: EmTrace = field(default_factory=lambda: EmTrace((), 0, True))
    n_pairs: int = 0
    start: datetime.date | None = None
    end: datetime.date | None = None

    def __post_init__(self) -> None:
        weights = np.asarray(self.weights, dtype=float)
        if np.any(weights < 0.0) or not math.isclose(weights.sum(), 1.0, abs_tol=1e-9):
            raise DomainError("BMA weights must lie on the probability simplex.")
        for name in ("weights", "intercepts", "slopes"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))

    @property
    def n_members(self) -> int:
        return self.weights.shape[0]

    def _check_members(self, members: npt.ArrayLike) -> FloatArray:
        arr = np.asarray(members, dtype=float)
        if arr.shape[-1] != self.n_members:
            raise DomainError(
                f"Expected {self.n_members} ensemble members, got {arr.shape[-1]}."
            )
        return arr

    def predictive(self, members: npt.ArrayLike) -> "PredictiveMarginal":
        """The predictive distribution for one station-day's ensemble."""
        return PredictiveMarginal(self, self._check_members(members))  # type: ignore[arg-type]

    def _common_payload(self) -> dict:
        return {
            "variable": self.variable,
            "weights": self.weights.tolist(),
            "intercepts": self.intercepts.tolist(),
            "slopes": self.slopes.tolist(),
            "window": _window_payload(self.start, self.end, self.n_pairs),
            "em": {
                "loglik": list(self.trace.loglik),
                "iterations": self.trace.iterations,
                "converged": self.trace.converged,
                "restarts": self.trace.restarts,
            },
        }


@dataclass(frozen=True, eq=False, kw_only=True)
class GaussianBmaModel(_BmaModel):
    """Gaussian kernels with a common variance."""

    family: ClassVar[consts.KernelFamily] = "gaussian"
    variance: float

    def means(self, members: npt.ArrayLike) -> FloatArray:
        return self.intercepts + self.slopes * self._check_members(members)

    def to_dict(self) -> models.GaussianModelPayload:
        return {"kind": "gaussian", **self._common_payload(), "variance": self.variance}  # type: ignore[typeddict-item]


@dataclass(frozen=True, eq=False, kw_only=True)
class GammaBmaModel(_BmaModel):
    """Gamma kernels for nonnegative variables such as wind speed."""

    family: ClassVar[consts.KernelFamily] = "gamma"
    var_intercept: float
    var_slope: float

    def shape_scale(self, members: npt.ArrayLike) -> tuple[FloatArray, FloatArray]:
        x = self._check_members(members)
        mean = np.maximum(self.intercepts + self.slopes * x, consts.LINK_FLOOR)
        variance = np.maximum(self.var_intercept + self.var_slope * x, consts.LINK_FLOOR)
        return gamma_moments_to_params(mean, variance)  # type: ignore[return-value]

    def to_dict(self) -> models.GammaModelPayload:
        return {
            "kind": "gamma",
            **self._common_payload(),
            "var_intercept": self.var_intercept,
            "var_slope": self.var_slope,
        }  # type: ignore[typeddict-item]


def _logit_features(members: FloatArray) -> FloatArray:
    """Logistic predictors (1, x^(1/3), delta) with delta = 1 where x == 0."""
    return np.stack(
        [np.ones_like(members), np.cbrt(members), (members == 0.0).astype(float)], axis=-1
    )


@dataclass(frozen=True, eq=False, kw_only=True)
class PrecipBmaModel(_BmaModel):
    """Point mass at zero plus gamma kernels on the cube-root scale."""

    family: ClassVar[consts.KernelFamily] = "precip"
    logit_coefs: FloatArray
    """Per-member logistic coefficients (a0k, a1k, a2k), shape (K, 3)."""
    var_intercept: float
    var_slope: float

    def __post_init__(self) -> None:
        super().__post_init__()
        coefs = np.asarray(self.logit_coefs, dtype=float)
        if coefs.shape != (self.n_members, 3):
            raise DomainError("Logistic coefficients must have shape (K, 3).")
        object.__setattr__(self, "logit_coefs", coefs)

    def zero_probabilities(self, members: npt.ArrayLike) -> FloatArray:
        """P(y = 0 | x_k) for every member."""
        x = self._check_members(members)
        return special.expit(np.sum(_logit_features(x) * self.logit_coefs, axis=-1))

    def shape_scale(self, members: npt.ArrayLike) -> tuple[FloatArray, FloatArray]:
        """Gamma parameters of the cube-root amount given rain."""
        x = self._check_members(members)
        mean = np.maximum(self.intercepts + self.slopes * np.cbrt(x), consts.LINK_FLOOR)
        variance = np.maximum(self.var_intercept + self.var_slope * x, consts.LINK_FLOOR)
        return gamma_moments_to_params(mean, variance)  # type: ignore[return-value]

    def to_dict(self) -> models.PrecipModelPayload:
        return {
            "kind": "precip",
            **self._common_payload(),
            "logit_coefs": self.logit_coefs.tolist(),
            "var_intercept": self.var_intercept,
            "var_slope": self.var_slope,
        }  # type: ignore[typeddict-item]


MarginalModel = GaussianBmaModel | GammaBmaModel | PrecipBmaModel


def model_from_dict(payload: object) -> MarginalModel:
    """Restore a fitted model from its JSON payload."""
    data = models.PydMarginalPayload.validate_python(payload)
    common = {
        "variable": data["variable"],
        "weights": np.asarray(data["weights"]),
        "intercepts": np.asarray(data["intercepts"]),
        "slopes": np.asarray(data["slopes"]),
        "trace": EmTrace(
            tuple(data["em"]["loglik"]),
            data["em"]["iterations"],
            data["em"]["converged"],
            data["em"]["restarts"],
        ),
        "n_pairs": data["window"]["n_pairs"],
        "start": _parse_date(data["window"]["start"]),
        "end": _parse_date(data["window"]["end"]),
    }
    if data["kind"] == "gaussian":
        return GaussianBmaModel(**common, variance=data["variance"])
    if data["kind"] == "gamma":
        return GammaBmaModel(
            **common, var_intercept=data["var_intercept"], var_slope=data["var_slope"]
        )
    return PrecipBmaModel(
        **common,
        logit_coefs=np.asarray(data["logit_coefs"]),
        var_intercept=data["var_intercept"],
        var_slope=data["var_slope"],
    )


# ---------------------------------------------------------------------------
# fitting
# ---------------------------------------------------------------------------


@dataclass
class _EmResult:
    weights: FloatArray
    theta: FloatArray
    loglik: list[float]
    converged: bool

    @property
    def final(self) -> float:
        return self.loglik[-1]


def _mixture_loglik(log_kernels: FloatArray, weights: FloatArray) -> float:
    with np.errstate(divide="ignore"):
        return float(special.logsumexp(log_kernels + np.log(weights), axis=1).sum())


def _em(
    log_kernels: Callable[[FloatArray], FloatArray],
    m_step: Callable[[FloatArray, FloatArray], FloatArray],
    theta: FloatArray,
    weights: FloatArray,
    *,
    fix_weights: bool = False,
    max_iter: int = consts.EM_MAX_ITER,
) -> _EmResult:
    lk = log_kernels(theta)
    ll = _mixture_loglik(lk, weights)
    if not np.isfinite(ll):
        raise FitError("Initial EM log-likelihood is not finite.")
    trace = [ll]
    converged = False
    for _ in range(max_iter):
        with np.errstate(divide="ignore"):
            log_joint = lk + np.log(weights)
        resp = np.exp(log_joint - special.logsumexp(log_joint, axis=1, keepdims=True))
        if not fix_weights:
            weights = resp.mean(axis=0)
            weights = weights / weights.sum()
        theta = m_step(theta, resp)
        lk = log_kernels(theta)
        new_ll = _mixture_loglik(lk, weights)
        trace.append(new_ll)
        if abs(new_ll - ll) < consts.EM_REL_TOL * max(abs(ll), 1e-12):
            converged = True
            break
        ll = new_ll
    return _EmResult(weights, theta, trace, converged)


def _fit_em(
    label: str,
    n_members: int,
    log_kernels: Callable[[FloatArray], FloatArray],
    m_step: Callable[[FloatArray, FloatArray], FloatArray],
    theta0: FloatArray,
) -> tuple[_EmResult, int]:
    """EM from equal weights, restarted from jittered weights when it plateaus
    below the best equal-weight fit."""
    equal = np.full(n_members, 1.0 / n_members)
    best = _em(log_kernels, m_step, theta0, equal)
    if n_members == 1:
        return best, 0
    baseline = _em(log_kernels, m_step, theta0, equal, fix_weights=True)
    restarts = 0
    while best.final < baseline.final and restarts < consts.EM_RESTARTS:
        restarts += 1
        rng = RngStream(restarts, stream_id(label, "em-restart"))
        start = rng.dirichlet(np.full(n_members, 5.0))
        candidate = _em(log_kernels, m_step, theta0, start)
        logger.debug("EM restart %d for %s: %.6f", restarts, label, candidate.final)
        if candidate.final > best.final:
            best = candidate
    if best.final < baseline.final:
        best = baseline
    return best, restarts


def _require_pairs(t: TrainingSet) -> None:
    needed = 2 * t.n_members + 2
    if t.n_pairs < needed:
        raise FitError(
            f"{t.variable}: {t.n_pairs} training pairs, at least {needed} needed "
            f"for {t.n_members} members."
        )


def _member_regressions(x: FloatArray, y: FloatArray) -> tuple[FloatArray, FloatArray]:
    """Least-squares (intercept, slope) of y on each member column of x."""
    intercepts = np.empty(x.shape[1])
    slopes = np.empty(x.shape[1])
    for k in range(x.shape[1]):
        design = np.column_stack([np.ones_like(x[:, k]), x[:, k]])
        (intercepts[k], slopes[k]), *_ = np.linalg.lstsq(design, y, rcond=None)
    return intercepts, slopes


def _coordinate_ascent(
    objective: Callable[[FloatArray], float],
    theta: FloatArray,
    bounds: list[tuple[float, float]],
) -> FloatArray:
    """One sweep of bounded one-dimensional maximisation per coordinate.

    A coordinate only moves when the objective improves, so the sweep never
    decreases it.
    """
    theta = theta.copy()
    current = objective(theta)
    for i, (lo, hi) in enumerate(bounds):

        def negated(value: float, i: int = i) -> float:
            trial = theta.copy()
            trial[i] = value
            result = objective(trial)
            return -result if np.isfinite(result) else np.inf

        res = optimize.minimize_scalar(
            negated, bounds=(lo, hi), method="bounded", options={"xatol": 1e-8}
        )
        if np.isfinite(res.fun) and -res.fun > current:
            theta[i] = res.x
            current = -res.fun
    return theta


def _variance_bounds(
    residual_var: float, x_mean: float
) -> list[tuple[float, float]]:
    upper = 10.0 * residual_var + 1.0
    return [(0.0, upper), (0.0, upper / max(x_mean, consts.LINK_FLOOR) + 1.0)]


def _gamma_kernel_logpdf(
    y: FloatArray, means: FloatArray, x: FloatArray, theta: FloatArray
) -> FloatArray:
    variance = np.maximum(theta[0] + theta[1] * x, consts.LINK_FLOOR)
    shape, scale = gamma_moments_to_params(means, variance)
    return np.asarray(gamma_logpdf(y[:, None], shape, scale))


def fit_gaussian_bma(t: TrainingSet) -> GaussianBmaModel:
    """Fit Gaussian-kernel BMA (temperature, pressure)."""
    _require_pairs(t)
    x, y = t.forecasts, t.observations
    if np.ptp(y) == 0.0:
        raise FitError(
            f"{t.variable}: observations are constant over the training window; "
            "use a wider window."
        )
    intercepts, slopes = _member_regressions(x, y)
    sq_resid = (y[:, None] - (intercepts + slopes * x)) ** 2

    def log_kernels(theta: FloatArray) -> FloatArray:
        return -0.5 * sq_resid / theta[0] - 0.5 * np.log(2.0 * np.pi * theta[0])

    def m_step(_theta: FloatArray, resp: FloatArray) -> FloatArray:
        return np.array([max(float(np.sum(resp * sq_resid)) / len(y), consts.VARIANCE_FLOOR)])

    theta0 = np.array([max(float(sq_resid.mean()), consts.VARIANCE_FLOOR)])
    result, restarts = _fit_em(t.variable, t.n_members, log_kernels, m_step, theta0)
    logger.debug(
        "%s gaussian EM: %d iterations, loglik %.4f",
        t.variable,
        len(result.loglik) - 1,
        result.final,
    )
    return GaussianBmaModel(
        variable=t.variable,
        weights=result.weights,
        intercepts=intercepts,
        slopes=slopes,
        variance=float(result.theta[0]),
        trace=EmTrace(tuple(result.loglik), len(result.loglik) - 1, result.converged, restarts),
        n_pairs=t.n_pairs,
        start=t.start,
        end=t.end,
    )


def fit_gamma_bma(t: TrainingSet) -> GammaBmaModel:
    """Fit gamma-kernel BMA for a nonnegative variable (wind speed).

    Observations below the calm threshold enter the likelihood as left-censored.
    """
    _require_pairs(t)
    x, y = t.forecasts, t.observations
    if np.any(y < 0.0):
        raise FitError(f"{t.variable}: observations must be nonnegative.")
    if np.all(y == 0.0):
        raise FitError(f"{t.variable}: all observations are zero.")
    intercepts, slopes = _member_regressions(x, y)
    means = np.maximum(intercepts + slopes * x, consts.LINK_FLOOR)
    calm = y < consts.WIND_CALM_THRESHOLD

    def log_kernels(theta: FloatArray) -> FloatArray:
        out = _gamma_kernel_logpdf(y, means, x, theta)
        if calm.any():
            variance = np.maximum(theta[0] + theta[1] * x[calm], consts.LINK_FLOOR)
            shape, scale = gamma_moments_to_params(means[calm], variance)
            with np.errstate(divide="ignore"):
                out[calm] = np.log(special.gammainc(shape, consts.WIND_CALM_THRESHOLD / scale))
        return out

    residual_var = float(np.mean((y[:, None] - means) ** 2))
    bounds = _variance_bounds(residual_var, float(x.mean()))

    def m_step(theta: FloatArray, resp: FloatArray) -> FloatArray:
        return _coordinate_ascent(
            lambda th: float(np.sum(resp * log_kernels(th))), theta, bounds
        )

    theta0 = np.array([max(residual_var, consts.LINK_FLOOR), 0.0])
    result, restarts = _fit_em(t.variable, t.n_members, log_kernels, m_step, theta0)
    return GammaBmaModel(
        variable=t.variable,
        weights=result.weights,
        intercepts=intercepts,
        slopes=slopes,
        var_intercept=float(result.theta[0]),
        var_slope=float(result.theta[1]),
        trace=EmTrace(tuple(result.loglik), len(result.loglik) - 1, result.converged, restarts),
        n_pairs=t.n_pairs,
        start=t.start,
        end=t.end,
    )


def fit_logistic(features: FloatArray, target: npt.NDArray[np.bool_]) -> FloatArray:
    """Maximum-likelihood logistic regression with a tiny ridge penalty.

    The penalty keeps coefficients finite under separation and for predictor
    columns that never vary (e.g. no zero-valued member in the window).
    """
    y = target.astype(float)
    ridge = consts.LOGISTIC_RIDGE

    def objective(beta: FloatArray) -> tuple[float, FloatArray]:
        eta = features @ beta
        nll = float(np.sum(np.logaddexp(0.0, eta) - y * eta)) + 0.5 * ridge * beta @ beta
        grad = features.T @ (special.expit(eta) - y) + ridge * beta
        return nll, grad

    res = optimize.minimize(
        objective, np.zeros(features.shape[1]), jac=True, method="BFGS",
        options={"gtol": 1e-8, "maxiter": 1000},
    )
    return np.asarray(res.x, dtype=float)


def fit_precip_bma(t: TrainingSet) -> PrecipBmaModel:
    """Fit the two-part precipitation BMA model."""
    _require_pairs(t)
    x, y = t.forecasts, t.observations
    if np.any(y < 0.0):
        raise FitError(f"{t.variable}: observations must be nonnegative.")
    dry = y == 0.0
    if not dry.any():
        raise FitError(f"{t.variable}: training window has no zero observations.")
    if dry.all():
        raise FitError(f"{t.variable}: training window has no positive observations.")
    wet = ~dry

    features = _logit_features(x)
    logit_coefs = np.stack([fit_logistic(features[:, k, :], dry) for k in range(x.shape[1])])
    with np.errstate(divide="ignore"):
        eta = np.sum(features * logit_coefs, axis=-1)
        log_p0 = -np.logaddexp(0.0, -eta)
        log_p_wet = -np.logaddexp(0.0, eta)

    cy = np.cbrt(y)
    cx = np.cbrt(x)
    intercepts, slopes = _member_regressions(cx[wet], cy[wet])
    means = np.maximum(intercepts + slopes * cx[wet], consts.LINK_FLOOR)
    x_wet = x[wet]

    def wet_logpdf(theta: FloatArray) -> FloatArray:
        return _gamma_kernel_logpdf(cy[wet], means, x_wet, theta)

    def log_kernels(theta: FloatArray) -> FloatArray:
        out = np.empty_like(x)
        out[dry] = log_p0[dry]
        out[wet] = log_p_wet[wet] + wet_logpdf(theta)
        return out

    residual_var = float(np.mean((cy[wet][:, None] - means) ** 2))
    bounds = _variance_bounds(residual_var, float(x.mean()))

    def m_step(theta: FloatArray, resp: FloatArray) -> FloatArray:
        resp_wet = resp[wet]
        return _coordinate_ascent(
            lambda th: float(np.sum(resp_wet * wet_logpdf(th))), theta, bounds
        )

    theta0 = np.array([max(residual_var, consts.LINK_FLOOR), 0.0])
    result, restarts = _fit_em(t.variable, t.n_members, log_kernels, m_step, theta0)
    return PrecipBmaModel(
        variable=t.variable,
        weights=result.weights,
        intercepts=intercepts,
        slopes=slopes,
        logit_coefs=logit_coefs,
        var_intercept=float(result.theta[0]),
        var_slope=float(result.theta[1]),
        trace=EmTrace(tuple(result.loglik), len(result.loglik) - 1, result.converged, restarts),
        n_pairs=t.n_pairs,
        start=t.start,
        end=t.end,
    )


_FITTERS: dict[consts.KernelFamily, Callable[[TrainingSet], MarginalModel]] = {
    "gaussian": fit_gaussian_bma,
    "gamma": fit_gamma_bma,
    "precip": fit_precip_bma,
}


def fit_marginal(t: TrainingSet) -> MarginalModel:
    """Fit the BMA model matching the kernel family of ``t.variable``."""
    try:
        family = consts.KERNEL_FAMILY[t.variable]
    except KeyError as e:
        raise DomainError(f"Unknown variable {t.variable!r}.") from e
    return _FITTERS[family](t)


# ---------------------------------------------------------------------------
# predictive distributions
# ---------------------------------------------------------------------------


class Density(NamedTuple):
    """Continuous density and discrete probability mass at a point."""

    density: float
    mass: float


@dataclass(frozen=True, eq=False)
class PredictiveMarginal:
    """One station-day, one-variable BMA predictive distribution.

    Evaluation happens on a working scale: the original scale for Gaussian and
    gamma kernels, the cube root of the amount for precipitation.
    """

    model: MarginalModel
    members: FloatArray

    @property
    def variable(self) -> str:
        return self.model.variable

    @property
    def family(self) -> consts.KernelFamily:
        return self.model.family

    @cached_property
    def _params(self) -> tuple[FloatArray, FloatArray, FloatArray]:
        """(location-or-shape, scale, zero probability) per member."""
        m = self.model
        if isinstance(m, GaussianBmaModel):
            means = m.means(self.members)
            return means, np.full_like(means, math.sqrt(m.variance)), np.zeros_like(means)
        shape, scale = m.shape_scale(self.members)
        if isinstance(m, PrecipBmaModel):
            return shape, scale, m.zero_probabilities(self.members)
        return shape, scale, np.zeros_like(shape)

    @cached_property
    def zero_mass(self) -> float:
        """Point mass at zero, alpha = sum_k w_k P(y = 0 | x_k)."""
        return float(self.model.weights @ self._params[2])

    def _working_cdf(self, r: FloatArray) -> FloatArray:
        a, b, p0 = self._params
        w = self.model.weights
        col = np.asarray(r, dtype=float).reshape(-1, 1)
        if self.family == "gaussian":
            comp = special.ndtr((col - a) / b)
        else:
            comp = p0 + (1.0 - p0) * special.gammainc(a, np.maximum(col, 0.0) / b)
            comp = np.where(col < 0.0, 0.0, comp)
        return (comp @ w).reshape(np.shape(r))

    def _to_working(self, y: FloatArray) -> FloatArray:
        return np.cbrt(y) if self.family == "precip" else y

    def _from_working(self, r: FloatArray) -> FloatArray:
        return r**3 if self.family == "precip" else r

    def cdf(self, y: FloatOrArray) -> FloatOrArray:
        """Mixture CDF F(y)."""
        arr = np.asarray(y, dtype=float)
        out = self._working_cdf(self._to_working(arr))
        return float(out) if np.ndim(y) == 0 else out

    def pdf(self, y: FloatOrArray) -> FloatOrArray:
        """Density of the continuous part; the point mass is reported by ``zero_mass``."""
        arr = np.asarray(y, dtype=float)
        if self.family != "gaussian" and np.any(arr < 0.0):
            raise DomainError(f"{self.variable}: density undefined for negative values.")
        a, b, p0 = self._params
        w = self.model.weights
        col = arr.reshape(-1, 1)
        if self.family == "gaussian":
            comp = np.exp(-0.5 * ((col - a) / b) ** 2) / (b * math.sqrt(2.0 * math.pi))
        elif self.family == "gamma":
            comp = np.exp(gamma_logpdf(col, a, b))
        else:
            r = np.cbrt(col)
            with np.errstate(divide="ignore", invalid="ignore"):
                jacobian = np.where(col > 0.0, 1.0 / (3.0 * r * r), 0.0)
            comp = (1.0 - p0) * np.exp(gamma_logpdf(r, a, b)) * jacobian
        out = (comp @ w).reshape(arr.shape)
        return float(out) if np.ndim(y) == 0 else out

    @cached_property
    def _bracket(self) -> tuple[float, float]:
        a, b, _ = self._params
        if self.family == "gaussian":
            return float(np.min(a) - 40.0 * b[0]), float(np.max(a) + 40.0 * b[0])
        return 0.0, float(np.max(special.gammaincinv(a, 1.0 - 1e-14) * b))

    def _check_u(self, u: FloatArray) -> None:
        if not np.all((u > 0.0) & (u < 1.0)):
            raise DomainError("Quantile levels must lie in (0, 1).")

    def quantile(self, u: float) -> float:
        """Pseudo-inverse sup{y : F(y) <= u} by bisection."""
        self._check_u(np.asarray(u))
        if u <= self.zero_mass:
            return 0.0
        lo, hi = self._bracket
        if u >= float(self._working_cdf(np.asarray(hi))):
            return float(self._from_working(np.asarray(hi)))
        tol = 1e-13 * max(1.0, abs(lo), abs(hi))
        r = bisect_increasing(
            lambda v: float(self._working_cdf(np.asarray(v))), u, lo, hi, tol=tol
        )
        return float(self._from_working(np.asarray(r)))

    def _vector_bisect(self, u: FloatArray, lo: FloatArray, hi: FloatArray) -> FloatArray:
        lo, hi = lo.copy(), hi.copy()
        tol = 1e-11 * max(1.0, *map(abs, self._bracket))
        for _ in range(200):
            if lo.size == 0 or np.max(hi - lo) <= tol:
                break
            mid = 0.5 * (lo + hi)
            below = self._working_cdf(mid) <= u
            lo = np.where(below, mid, lo)
            hi = np.where(below, hi, mid)
        return 0.5 * (lo + hi)

    @cached_property
    def _table(self) -> tuple[FloatArray, FloatArray]:
        """Inverse-CDF table: working-scale points and their CDF values."""
        lo, hi = self._bracket
        n = consts.QUANTILE_TABLE_SIZE
        levels = (np.arange(n) + 0.5) / n
        levels = levels[levels > self.zero_mass]
        inner = self._vector_bisect(
            levels, np.full(levels.shape, lo), np.full(levels.shape, hi)
        )
        points = np.concatenate([[lo], inner, [hi]])
        points = np.maximum.accumulate(points)
        return points, self._working_cdf(points)

    def quantiles(self, u: npt.ArrayLike) -> FloatArray:
        """Vectorised pseudo-inverse using the cached table and bisection refinement."""
        levels = np.asarray(u, dtype=float)
        self._check_u(levels)
        flat = levels.ravel()
        out = np.zeros_like(flat)
        active = flat > self.zero_mass
        points, values = self._table
        target = flat[active]
        idx = np.clip(np.searchsorted(values, target, side="right"), 1, len(points) - 1)
        r = self._vector_bisect(target, points[idx - 1], points[idx])
        r = np.where(target >= values[-1], points[-1], r)
        out[active] = self._from_working(r)
        return out.reshape(levels.shape)


def marginal_pdf(m: PredictiveMarginal, y: float) -> Density:
    """Continuous density at ``y`` plus the discrete mass located at ``y``."""
    density = float(m.pdf(y))
    mass = m.zero_mass if y == 0.0 else 0.0
    return Density(density, mass)


def marginal_cdf(m: PredictiveMarginal, y: float) -> float:
    return float(m.cdf(y))


def marginal_quantile(m: PredictiveMarginal, u: float) -> float:
    return m.quantile(u)
