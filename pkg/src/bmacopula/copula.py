"""Gaussian copula linking the per-variable BMA marginals.

Observations are mapped to latent standard normal scores through their
predictive marginals, a correlation matrix is estimated from those scores, and
joint samples are drawn by correlating standard normals and pushing them back
through the marginal quantile functions.
"""

import datetime
import logging
from collections.abc import Sequence
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import numpy.typing as npt
from scipy import special

from bmacopula import consts, models
from bmacopula.errors import DomainError, EstimationError
from bmacopula.marginals import PredictiveMarginal
from bmacopula.numerics import (
    Matrix,
    RngStream,
    cholesky_factor,
    nearest_correlation_repair,
    std_normal_pdf,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class CorrelationMatrix:
    """A validated copula correlation matrix with its variable ordering."""

    variables: tuple[str, ...]
    values: Matrix
    station: str | None = None
    start: datetime.date | None = None
    end: datetime.date | None = None
    n_records: int = 0

    def __post_init__(self) -> None:
        values = np.array(self.values, dtype=float)
        p = len(self.variables)
        if values.shape != (p, p):
            raise DomainError(
                f"Correlation matrix of shape {values.shape} does not match {p} variables."
            )
        if not np.array_equal(np.diag(values), np.ones(p)):
            raise DomainError("Correlation matrix diagonal must be exactly 1.")
        object.__setattr__(self, "variables", tuple(self.variables))
        object.__setattr__(self, "values", values)
        # raises DecompositionError or DomainError for invalid matrices
        _ = self.cholesky

    @property
    def p(self) -> int:
        return len(self.variables)

    @cached_property
    def cholesky(self) -> Matrix:
        return cholesky_factor(self.values)

    def entry(self, a: str, b: str) -> float:
        return float(self.values[self.variables.index(a), self.variables.index(b)])

    @classmethod
    def identity(cls, variables: Sequence[str]) -> "CorrelationMatrix":
        return cls(tuple(variables), np.eye(len(variables)))

    def to_dict(self) -> models.CorrelationPayload:
        return {
            "station": self.station,
            "variables": list(self.variables),
            "p": self.p,
            "entries": self.values.ravel().tolist(),
            "period": {
                "start": self.start.isoformat() if self.start else None,
                "end": self.end.isoformat() if self.end else None,
            },
            "n_records": self.n_records,
        }

    @classmethod
    def from_dict(cls, payload: object) -> "CorrelationMatrix":
        data = models.PydCorrelationPayload.validate_python(payload)
        p = data["p"]
        if len(data["variables"]) != p or len(data["entries"]) != p * p:
            raise DomainError("Correlation payload dimensions are inconsistent.")
        period = data["period"]
        return cls(
            tuple(data["variables"]),
            np.asarray(data["entries"], dtype=float).reshape(p, p),
            station=data["station"],
            start=datetime.date.fromisoformat(period["start"]) if period["start"] else None,
            end=datetime.date.fromisoformat(period["end"]) if period["end"] else None,
            n_records=data["n_records"],
        )


@dataclass(frozen=True, eq=False)
class LatentRecord:
    """Latent Gaussian scores of one station-day's observation vector.

    For censored entries ``values`` holds the upper bound Φ⁻¹(α) of the
    censoring interval (-inf, Φ⁻¹(α)].
    """

    values: npt.NDArray[np.float64]
    censored: npt.NDArray[np.bool_]
    alpha: npt.NDArray[np.float64]
    """Probability of the censoring interval of each censored entry.

    This is the point mass at zero for dry precipitation and F(0.1) for calm
    wind. Uncensored entries hold the variable's point mass at zero, which is
    0 for continuous variables.
    """
    clamped: npt.NDArray[np.bool_]
    variables: tuple[str, ...] = ()
    station: str | None = None
    date: datetime.date | None = None

    @property
    def p(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True, eq=False)
class JointSample:
    """n joint draws in original units, one column per variable."""

    values: npt.NDArray[np.float64]
    variables: tuple[str, ...]
    latent: npt.NDArray[np.float64] | None = field(default=None, repr=False)
    """The correlated standard normals the sample was generated from."""

    @property
    def n(self) -> int:
        return self.values.shape[0]

    def column(self, variable: str) -> npt.NDArray[np.float64]:
        return self.values[:, self.variables.index(variable)]


def _clamp(u: npt.NDArray[np.float64]) -> tuple[npt.NDArray[np.float64], npt.NDArray[np.bool_]]:
    lo, hi = consts.LATENT_CLAMP, 1.0 - consts.LATENT_CLAMP
    clamped = (u < lo) | (u > hi)
    return np.clip(u, lo, hi), clamped


def _check_support(m: PredictiveMarginal, y: float) -> None:
    if not np.isfinite(y):
        raise DomainError(f"{m.variable}: observation must be finite.")
    if m.family != "gaussian" and y < 0.0:
        raise DomainError(f"{m.variable}: observation {y!r} outside the support [0, inf).")


def latent_from_observation(
    marginals: Sequence[PredictiveMarginal],
    obs: npt.ArrayLike,
    station: str | None = None,
    date: datetime.date | None = None,
) -> LatentRecord:
    """Map an observation vector to latent standard normal scores."""
    y = np.asarray(obs, dtype=float)
    p = len(marginals)
    if y.shape != (p,):
        raise DomainError(f"Expected an observation vector of length {p}, got {y.shape}.")
    u = np.empty(p)
    censored = np.zeros(p, dtype=bool)
    alpha = np.zeros(p)
    for j, m in enumerate(marginals):
        _check_support(m, float(y[j]))
        alpha[j] = m.zero_mass
        if alpha[j] > 0.0 and y[j] == 0.0:
            censored[j] = True
            u[j] = alpha[j]
        elif m.family == "gamma" and y[j] < consts.WIND_CALM_THRESHOLD:
            # calm winds are left-censored, matching the gamma likelihood
            censored[j] = True
            alpha[j] = m.cdf(consts.WIND_CALM_THRESHOLD)
            u[j] = alpha[j]
        else:
            u[j] = m.cdf(float(y[j]))
    u, clamped = _clamp(u)
    if np.any(clamped):
        names = [m.variable for m, flag in zip(marginals, clamped) if flag]
        logger.warning("Clamped saturated marginal CDF for %s (%s %s).", names, station, date)
    return LatentRecord(
        values=special.ndtri(u),
        censored=censored,
        alpha=alpha,
        clamped=clamped,
        variables=tuple(m.variable for m in marginals),
        station=station,
        date=date,
    )


def _impute(record: LatentRecord) -> npt.NDArray[np.float64]:
    # conditional mean of a standard normal truncated to (-inf, q]
    z = record.values.copy()
    if np.any(record.censored):
        q = z[record.censored]
        a = np.clip(record.alpha[record.censored], consts.LATENT_CLAMP, 1.0)
        z[record.censored] = -std_normal_pdf(q) / a
    return z


def estimate_correlation(
    latents: Sequence[LatentRecord], variables: Sequence[str] | None = None
) -> CorrelationMatrix:
    """Sample correlation of latent scores, censored entries imputed by their
    truncated-normal mean, repaired to be positive definite."""
    if not latents:
        raise EstimationError("No latent records to estimate a correlation matrix from.")
    p = latents[0].p
    names = tuple(variables) if variables is not None else latents[0].variables
    if len(names) != p:
        names = tuple(f"v{j}" for j in range(p))
    if any(r.p != p for r in latents):
        raise DomainError("Latent records disagree on dimension.")
    if len(latents) < p + 1:
        raise EstimationError(
            f"{len(latents)} latent records cannot determine a {p}x{p} correlation matrix."
        )
    z = np.vstack([_impute(r) for r in latents])
    sd = z.std(axis=0)
    # rounding leaves a repeated value with a standard deviation near 1e-16
    flat = sd <= 1e-12 * np.maximum(1.0, np.abs(z).max(axis=0))
    for j in np.flatnonzero(flat):
        raise EstimationError(f"Latent scores of {names[j]} have zero variance.")
    corr = nearest_correlation_repair(np.corrcoef(z, rowvar=False))
    corr = 0.5 * (corr + corr.T)
    np.fill_diagonal(corr, 1.0)
    stations = {r.station for r in latents}
    dates = [r.date for r in latents if r.date is not None]
    return CorrelationMatrix(
        names,
        corr,
        station=stations.pop() if len(stations) == 1 else None,
        start=min(dates) if dates else None,
        end=max(dates) if dates else None,
        n_records=len(latents),
    )


def sample_joint(
    marginals: Sequence[PredictiveMarginal],
    c: CorrelationMatrix,
    n: int,
    rng: RngStream,
) -> JointSample:
    """Draw n vectors from the joint predictive distribution under copula ``c``."""
    variables = tuple(m.variable for m in marginals)
    if c.p != len(marginals):
        raise DomainError(
            f"Correlation matrix has dimension {c.p} but {len(marginals)} marginals given."
        )
    if c.variables != variables:
        raise DomainError(f"Variable ordering {c.variables} does not match {variables}.")
    if n < 1:
        raise DomainError("Sample size must be at least 1.")
    z = rng.standard_normal((n, c.p)) @ cholesky_factor(c.values).T
    u, _ = _clamp(special.ndtr(z))
    values = np.column_stack([m.quantiles(u[:, j]) for j, m in enumerate(marginals)])
    return JointSample(values, variables, latent=z)


def independence_sample(
    marginals: Sequence[PredictiveMarginal], n: int, rng: RngStream
) -> JointSample:
    """Joint sample with independent components; the copula with identity matrix."""
    identity = CorrelationMatrix.identity([m.variable for m in marginals])
    return sample_joint(marginals, identity, n, rng)


def latent_matrix(
    marginals: Sequence[PredictiveMarginal], values: npt.ArrayLike
) -> npt.NDArray[np.float64]:
    """Latent scores of every row of a sample; censored zeros become NaN."""
    arr = np.asarray(values, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != len(marginals):
        raise DomainError("Sample columns must match the marginals.")
    out = np.empty_like(arr)
    for j, m in enumerate(marginals):
        col = arr[:, j]
        u, _ = _clamp(np.asarray(m.cdf(col), dtype=float))
        z = special.ndtri(u)
        if m.zero_mass > 0.0:
            z = np.where(col == 0.0, np.nan, z)
        out[:, j] = z
    return out


def latent_correlation(marginals: Sequence[PredictiveMarginal], sample: JointSample) -> Matrix:
    """Pairwise correlation of a sample's latent scores over uncensored rows."""
    z = latent_matrix(marginals, sample.values)
    complete = z[np.all(np.isfinite(z), axis=1)]
    p = z.shape[1]
    if complete.shape[0] <= p:
        return np.full((p, p), np.nan)
    return np.corrcoef(complete, rowvar=False)
