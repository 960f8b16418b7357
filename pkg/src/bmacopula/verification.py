"""Multivariate verification scores.

Energy score (exact ensemble form and two-sample Monte Carlo form), Euclidean
error about the geometric median, determinant sharpness, and the multivariate
rank histogram with its reliability index.
"""

import datetime
import logging
import math
from collections.abc import Iterable, Iterator, Mapping, Sequence
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
import numpy.typing as npt
from scipy.spatial import distance

from bmacopula import consts
from bmacopula.errors import DomainError, EmptyReportError
from bmacopula.numerics import RngStream

logger = logging.getLogger(__name__)

FloatArray = npt.NDArray[np.float64]


def _points(forecast: npt.ArrayLike, name: str = "forecast") -> FloatArray:
    arr = np.asarray(forecast, dtype=float)
    if arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    if arr.ndim != 2 or arr.shape[0] == 0:
        raise DomainError(f"{name} must be a non-empty (n, p) array.")
    return arr


def _vector(obs: npt.ArrayLike, p: int) -> FloatArray:
    arr = np.atleast_1d(np.asarray(obs, dtype=float))
    if arr.shape != (p,):
        raise DomainError(f"Observation of shape {arr.shape} does not match dimension {p}.")
    return arr


# ---------------------------------------------------------------------------
# rank histograms
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RankHistogram:
    """Bin counts for ranks 1..m+1."""

    counts: tuple[int, ...]

    @classmethod
    def empty(cls, m: int) -> "RankHistogram":
        if m < 1:
            raise DomainError("Rank histograms need at least one forecast member.")
        return cls((0,) * (m + 1))

    @classmethod
    def from_ranks(cls, ranks: Iterable[int], m: int) -> "RankHistogram":
        counts = [0] * (m + 1)
        for r in ranks:
            if not 1 <= r <= m + 1:
                raise DomainError(f"Rank {r} outside 1..{m + 1}.")
            counts[r - 1] += 1
        return cls(tuple(counts))

    @property
    def m(self) -> int:
        return len(self.counts) - 1

    @property
    def total(self) -> int:
        return sum(self.counts)

    def merge(self, other: "RankHistogram") -> "RankHistogram":
        if other.m != self.m:
            raise DomainError("Cannot merge rank histograms with different bin counts.")
        return RankHistogram(tuple(a + b for a, b in zip(self.counts, other.counts)))


def multivariate_rank(obs: npt.ArrayLike, forecast: npt.ArrayLike, rng: RngStream) -> int:
    """Rank of the observation among the forecast vectors, in 1..m+1.

    Each pooled vector gets a pre-rank equal to the number of pooled vectors it
    weakly dominates componentwise, itself included. Ties between the
    observation's pre-rank and forecast pre-ranks are broken uniformly at random.
    """
    members = _points(forecast)
    y = _vector(obs, members.shape[1])
    pooled = np.vstack([y, members])
    below_or_equal = np.all(pooled[:, None, :] <= pooled[None, :, :], axis=2)
    pre_rank = below_or_equal.sum(axis=0)
    s_obs, s_fc = pre_rank[0], pre_rank[1:]
    lower = int(np.count_nonzero(s_fc < s_obs))
    ties = int(np.count_nonzero(s_fc == s_obs))
    return lower + 1 + (rng.integers(0, ties + 1) if ties else 0)


def _delta_from_counts(counts: npt.NDArray[np.int64]) -> npt.NDArray[np.float64]:
    counts = np.atleast_2d(counts)
    bins = counts.shape[-1]
    total = counts.sum(axis=-1)
    numerator = np.abs(counts * bins - total[:, None]).sum(axis=-1)
    return numerator / (total * bins)


def reliability_index(h: RankHistogram) -> float:
    """Δ = Σ_j |ζ_j - 1/(m+1)| over the relative bin frequencies ζ_j."""
    if h.total == 0:
        raise DomainError("Reliability index of an empty rank histogram is undefined.")
    bins = h.m + 1
    # integer numerator: zero exactly when all bins are equal
    numerator = sum(abs(c * bins - h.total) for c in h.counts)
    return numerator / (h.total * bins)


def uniform_null_delta_quantile(
    m: int, cases: int, q: float, rng: RngStream, draws: int = 10_000
) -> float:
    """Quantile of Δ over rank histograms drawn from the uniform multinomial."""
    if cases < 1 or not 0.0 < q < 1.0:
        raise DomainError("Null Δ quantile needs cases >= 1 and 0 < q < 1.")
    counts = rng.generator.multinomial(cases, np.full(m + 1, 1.0 / (m + 1)), size=draws)
    return float(np.quantile(_delta_from_counts(counts), q))


# ---------------------------------------------------------------------------
# sharpness, median, scores
# ---------------------------------------------------------------------------


class Sharpness(NamedTuple):
    value: float
    degenerate: bool


def determinant_sharpness(forecast: npt.ArrayLike) -> Sharpness:
    """DS = det(Σ)^(1/(2p)) of the empirical covariance of the forecast vectors."""
    x = _points(forecast)
    n, p = x.shape
    if n <= p:
        raise DomainError(f"Determinant sharpness needs more than {p} vectors, got {n}.")
    eigvals = np.linalg.eigvalsh(np.atleast_2d(np.cov(x, rowvar=False)))
    top = float(eigvals[-1])
    if top <= 0.0 or eigvals[0] <= 1e-12 * top:
        return Sharpness(0.0, True)
    return Sharpness(math.exp(float(np.sum(np.log(eigvals))) / (2.0 * p)), False)


def geometric_median_objective(points: npt.ArrayLike, mu: npt.ArrayLike) -> float:
    x = _points(points, "points")
    return float(np.linalg.norm(x - np.asarray(mu, dtype=float), axis=1).sum())


def weiszfeld_iterates(
    points: npt.ArrayLike,
    tol: float = consts.WEISZFELD_TOL,
    max_iter: int = consts.WEISZFELD_MAX_ITER,
) -> Iterator[FloatArray]:
    """Iterates of the Weiszfeld algorithm, starting from the centroid.

    Uses the modified update that stays well defined when an iterate coincides
    with one of the points.
    """
    x = _points(points, "points")
    y = x.mean(axis=0)
    yield y
    scale = max(1.0, float(np.max(np.abs(x))))
    for _ in range(max_iter):
        d = np.linalg.norm(x - y, axis=1)
        away = d > 1e-15 * scale
        if not np.any(away):
            return
        inv = 1.0 / d[away]
        t = (x[away] * inv[:, None]).sum(axis=0) / inv.sum()
        coincident = int(np.count_nonzero(~away))
        if coincident:
            r = float(np.linalg.norm(((x[away] - y) * inv[:, None]).sum(axis=0)))
            if r <= coincident:
                # the coinciding point is optimal
                return
            gamma = coincident / r
            t = (1.0 - gamma) * t + gamma * y
        step = float(np.linalg.norm(t - y))
        y = t
        yield y
        if step < tol * scale:
            return


def geometric_median(points: npt.ArrayLike) -> FloatArray:
    """Point minimising the sum of Euclidean distances to ``points``."""
    median = None
    for median in weiszfeld_iterates(points):
        pass
    assert median is not None
    return median


def euclidean_error(forecast: npt.ArrayLike, obs: npt.ArrayLike) -> float:
    """Distance between the forecast's geometric median and the observation."""
    x = _points(forecast)
    y = _vector(obs, x.shape[1])
    return float(np.linalg.norm(geometric_median(x) - y))


def energy_score_exact(forecast: npt.ArrayLike, obs: npt.ArrayLike) -> float:
    """Energy score of an m-member ensemble, exact double-sum form."""
    x = _points(forecast)
    y = _vector(obs, x.shape[1])
    m = x.shape[0]
    spread = distance.pdist(x).sum() / (m * m) if m > 1 else 0.0
    return float(np.linalg.norm(x - y, axis=1).mean() - spread)


def energy_score_mc(
    forecast_a: npt.ArrayLike, forecast_b: npt.ArrayLike, obs: npt.ArrayLike
) -> float:
    """Energy score estimated from two independent samples of equal size."""
    a = _points(forecast_a, "forecast_a")
    b = _points(forecast_b, "forecast_b")
    if a.shape != b.shape:
        raise DomainError("Monte Carlo energy score needs two samples of equal shape.")
    y = _vector(obs, a.shape[1])
    return float(
        np.linalg.norm(a - y, axis=1).mean() - 0.5 * np.linalg.norm(a - b, axis=1).mean()
    )


def ensemble_crps(members: npt.ArrayLike, obs: float) -> float:
    """CRPS of a univariate ensemble via the sorted-member identity."""
    x = np.sort(np.asarray(members, dtype=float).ravel())
    m = x.size
    if m == 0:
        raise DomainError("CRPS needs at least one member.")
    coefs = 2.0 * np.arange(1, m + 1) - m - 1.0
    return float(np.abs(x - obs).mean() - (coefs @ x) / (m * m))


# ---------------------------------------------------------------------------
# normalisation
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class NormalizationSpec:
    """Per-variable observed mean and standard deviation over a test set."""

    variables: tuple[str, ...]
    mean: FloatArray
    sd: FloatArray

    def __post_init__(self) -> None:
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=float))
        object.__setattr__(self, "sd", np.asarray(self.sd, dtype=float))
        for name, s in zip(self.variables, self.sd):
            if not s > 0.0:
                raise DomainError(f"Observed standard deviation of {name} is zero.")

    @classmethod
    def from_observations(
        cls, observations: npt.ArrayLike, variables: Sequence[str]
    ) -> "NormalizationSpec":
        obs = _points(observations, "observations")
        if obs.shape[1] != len(variables):
            raise DomainError("Observation columns do not match the variables.")
        return cls(tuple(variables), obs.mean(axis=0), obs.std(axis=0))

    def apply(self, values: npt.ArrayLike) -> FloatArray:
        return (np.asarray(values, dtype=float) - self.mean) / self.sd

    def to_dict(self) -> dict[str, dict[str, float]]:
        return {
            v: {"mean": float(mu), "sd": float(s)}
            for v, mu, s in zip(self.variables, self.mean, self.sd)
        }


@dataclass(frozen=True, eq=False)
class ForecastCase:
    """One station-day: the observation and each method's forecast vectors."""

    station: str
    date: datetime.date
    observation: FloatArray
    forecasts: Mapping[str, FloatArray] = field(default_factory=dict)


def normalize(cases: Sequence[ForecastCase], spec: NormalizationSpec) -> list[ForecastCase]:
    """Shift and scale every forecast and observation by the spec's statistics."""
    return [
        ForecastCase(
            c.station,
            c.date,
            spec.apply(c.observation),
            {method: spec.apply(values) for method, values in c.forecasts.items()},
        )
        for c in cases
    ]


# ---------------------------------------------------------------------------
# aggregation
# ---------------------------------------------------------------------------


class CaseScore(NamedTuple):
    es: float
    ee: float
    ds: float
    degenerate: bool
    rank: int


def score_forecast(
    forecast: npt.ArrayLike,
    obs: npt.ArrayLike,
    rng: RngStream,
    sampled: bool,
    rank_members: int,
) -> CaseScore:
    """Score one case for one method.

    Ensembles (``sampled`` false) use the exact energy score and are ranked as
    they are. Samples from a predictive distribution use the two-half Monte
    Carlo energy score and are subsampled to ``rank_members`` for ranking.
    """
    x = _points(forecast)
    y = _vector(obs, x.shape[1])
    if sampled:
        half = x.shape[0] // 2
        if half < 1:
            raise DomainError("A sampled forecast needs at least two vectors.")
        es = energy_score_mc(x[:half], x[half : 2 * half], y)
        ranked = x[rng.subsample(x.shape[0], min(rank_members, x.shape[0]))]
    else:
        es = energy_score_exact(x, y)
        ranked = x
    # n <= p vectors always span a singular covariance
    sharp = determinant_sharpness(x) if x.shape[0] > x.shape[1] else Sharpness(0.0, True)
    return CaseScore(es, euclidean_error(x, y), sharp.value, sharp.degenerate,
                     multivariate_rank(y, ranked, rng))


@dataclass(frozen=True)
class ScoreSummary:
    """Mean scores of one method over a set of cases."""

    es: float
    ee: float
    delta: float
    ds: float
    cases: int
    es_se: float
    ee_se: float
    degenerate: int = 0

    def to_dict(self) -> dict[str, float | int]:
        return {
            "ES": self.es,
            "EE": self.ee,
            "Delta": self.delta,
            "DS": self.ds,
            "cases": self.cases,
            "ES_se": self.es_se,
            "EE_se": self.ee_se,
            "degenerate": self.degenerate,
        }


def _standard_error(values: FloatArray) -> float:
    if values.size < 2:
        return 0.0
    return float(values.std(ddof=1) / math.sqrt(values.size))


def summarize(scores: Sequence[CaseScore], histogram: RankHistogram) -> ScoreSummary:
    if not scores:
        raise EmptyReportError("No scoreable cases.")
    es = np.array([s.es for s in scores])
    ee = np.array([s.ee for s in scores])
    # degenerate cases are counted, not averaged
    ds = np.array([s.ds for s in scores if not s.degenerate])
    return ScoreSummary(
        es=float(es.mean()),
        ee=float(ee.mean()),
        delta=reliability_index(histogram),
        ds=float(ds.mean()) if ds.size else math.nan,
        cases=len(scores),
        es_se=_standard_error(es),
        ee_se=_standard_error(ee),
        degenerate=sum(s.degenerate for s in scores),
    )
