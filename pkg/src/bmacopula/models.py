"""Configuration and payload models for the bmacopula package."""

import datetime
import sys
from typing import Annotated, Any, Literal

import pydantic

from bmacopula import consts

if sys.version_info < (3, 12):
    from typing_extensions import TypedDict
else:
    from typing import TypedDict


class RunConfig(TypedDict):
    """A configuration for one verification experiment."""

    # long-format CSV used to estimate the copula correlation matrices
    calibration_path: str
    # long-format CSV holding the days to forecast and verify
    test_path: str
    # first test day; earlier days of the test file only serve as training history
    test_start: datetime.date | None
    # number of complete days in the rolling BMA training window
    window: Annotated[int, pydantic.Field(ge=2)]
    # joint samples drawn per station-day
    sample_size: Annotated[int, pydantic.Field(ge=consts.MIN_SAMPLE_SIZE)]
    seed: Annotated[int, pydantic.Field(ge=0)]
    # restrict the run to these stations, all stations when null
    stations: list[str] | None
    output_dir: str
    methods: list[consts.Method]
    variables: list[consts.VariableName]
    # worker processes; results do not depend on this value
    jobs: Annotated[int, pydantic.Field(ge=1)]
    # ensemble size used for rank histograms, raw ensemble size when null
    mrh_members: Annotated[int, pydantic.Field(ge=1)] | None


PydRunConfig = pydantic.TypeAdapter(RunConfig)

DEFAULT_RUN_CONFIG: RunConfig = {
    "calibration_path": "calibration.csv",
    "test_path": "test.csv",
    "test_start": None,
    "window": consts.DEFAULT_WINDOW,
    "sample_size": consts.DEFAULT_SAMPLE_SIZE,
    "seed": 0,
    "stations": None,
    "output_dir": "bmacopula_out",
    "methods": list(consts.METHODS),
    "variables": list(consts.VARIABLES),  # type: ignore[arg-type]
    "jobs": 1,
    "mrh_members": None,
}


class SyntheticSpec(TypedDict):
    """A recipe for a synthetic dataset drawn from a known Gaussian copula."""

    stations: list[str]
    start_date: datetime.date
    days: Annotated[int, pydantic.Field(ge=1)]
    members: Annotated[int, pydantic.Field(ge=1)]
    variables: list[consts.VariableName]
    # true latent correlation matrix, ordered as variables
    correlation: list[list[float]]
    # per-member bias in units of the observation spread
    member_bias: list[float]
    # member noise in units of the observation spread
    member_noise: Annotated[float, pydantic.Field(ge=0.0)]
    seed: Annotated[int, pydantic.Field(ge=0)]
    # days must exceed the rolling window so that at least one day is forecastable
    window: Annotated[int, pydantic.Field(ge=2)]


PydSyntheticSpec = pydantic.TypeAdapter(SyntheticSpec)

DEFAULT_SYNTHETIC_SPEC: SyntheticSpec = {
    "stations": ["STN001", "STN002", "STN003"],
    "start_date": datetime.date(2007, 1, 1),
    "days": 730,
    "members": 8,
    "variables": list(consts.VARIABLES),  # type: ignore[arg-type]
    "correlation": [list(row) for row in consts.REFERENCE_CORRELATION],
    "member_bias": [0.3, -0.2, 0.1, 0.0, -0.1, 0.2, -0.3, 0.05],
    "member_noise": 0.3,
    "seed": 2008,
    "window": consts.DEFAULT_WINDOW,
}


class TrainingWindowPayload(TypedDict):
    start: str | None
    end: str | None
    n_pairs: int


class EmPayload(TypedDict):
    loglik: list[float]
    iterations: int
    converged: bool
    restarts: int


class _ModelPayload(TypedDict):
    variable: str
    weights: list[float]
    intercepts: list[float]
    slopes: list[float]
    window: TrainingWindowPayload
    em: EmPayload


class GaussianModelPayload(_ModelPayload):
    kind: Literal["gaussian"]
    variance: float


class GammaModelPayload(_ModelPayload):
    kind: Literal["gamma"]
    var_intercept: float
    var_slope: float


class PrecipModelPayload(_ModelPayload):
    kind: Literal["precip"]
    logit_coefs: list[list[float]]
    var_intercept: float
    var_slope: float


MarginalPayload = Annotated[
    GaussianModelPayload | GammaModelPayload | PrecipModelPayload,
    pydantic.Field(discriminator="kind"),
]
PydMarginalPayload: pydantic.TypeAdapter[MarginalPayload] = pydantic.TypeAdapter(
    MarginalPayload
)


class PeriodPayload(TypedDict):
    start: str | None
    end: str | None


class CorrelationPayload(TypedDict):
    """A persisted copula correlation matrix."""

    station: str | None
    variables: list[str]
    p: int
    # row-major matrix entries
    entries: list[float]
    period: PeriodPayload
    n_records: int


PydCorrelationPayload = pydantic.TypeAdapter(CorrelationPayload)


class DatasetManifest(TypedDict):
    stations: list[str]
    variables: list[str]
    start: str | None
    end: str | None
    n_members: int
    n_records: int
    dropped: int


class StageRecord(TypedDict):
    seconds: float
    cases: dict[str, int]
    skipped: dict[str, str]
    diagnostics: dict[str, Any]


class RunManifest(TypedDict):
    version: str
    config: dict[str, Any]
    datasets: dict[str, DatasetManifest]
    stages: dict[str, StageRecord]
    # output path relative to the output directory -> sha256 of its content
    outputs: dict[str, str]


PydRunManifest = pydantic.TypeAdapter(RunManifest)


class ErrorReport(TypedDict):
    error: str
    message: str
    exit_code: int


PydErrorReport = pydantic.TypeAdapter(ErrorReport)
