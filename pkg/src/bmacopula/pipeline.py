"""Estimate, forecast and verify stages of a copula verification experiment.

Every stage reads the previous stage's files from the output directory, so
stages can be rerun independently. Work is split into (station, day) units,
each with its own random stream, which keeps outputs identical for any number
of worker processes.
"""

import datetime
import logging
import time
import zipfile
from collections.abc import Callable, Iterable, Mapping, Sequence
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, TypeVar

import numpy as np
import numpy.typing as npt
import pandas as pd

from bmacopula import consts, models
from bmacopula.__version__ import VERSION
from bmacopula.copula import (
    CorrelationMatrix,
    LatentRecord,
    estimate_correlation,
    independence_sample,
    latent_correlation,
    latent_from_observation,
    sample_joint,
)
from bmacopula.data import Dataset, StationDayRecord, load_dataset, rolling_window
from bmacopula.errors import (
    BmaCopulaError,
    ConfigError,
    DependencyError,
    EmptyReportError,
    FitError,
    WindowError,
)
from bmacopula.marginals import PredictiveMarginal, fit_marginal
from bmacopula.numerics import RngStream, stream_id
from bmacopula.utils import dump_json, load_json, sha256_file
from bmacopula.verification import (
    CaseScore,
    ForecastCase,
    NormalizationSpec,
    RankHistogram,
    ScoreSummary,
    ensemble_crps,
    normalize,
    score_forecast,
    summarize,
    uniform_null_delta_quantile,
)

logger = logging.getLogger(__name__)

T = TypeVar("T")
U = TypeVar("U")
Unit = tuple[str, datetime.date]

_NPZ_DATE_TIME = (1980, 1, 1, 0, 0, 0)
_NULL_DELTA_LEVEL = 0.99


# ---------------------------------------------------------------------------
# inputs and worker plumbing
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Inputs:
    """Datasets of one run, restricted to the configured stations and variables."""

    calibration: Dataset
    test: Dataset
    history: Dataset
    """Union of both datasets; rolling windows draw from it."""

    @property
    def variables(self) -> tuple[str, ...]:
        return self.history.variables

    @property
    def n_members(self) -> int:
        return self.history.n_members


def _prepare(dataset: Dataset, config: models.RunConfig) -> Dataset:
    if not dataset.records:
        return dataset
    dataset = dataset.select_variables(config["variables"])
    if config["stations"] is not None:
        dataset = dataset.select_stations(config["stations"])
    return dataset


def load_inputs(config: models.RunConfig) -> Inputs:
    """Load and filter both datasets and split them at ``test_start``."""
    calibration = _prepare(load_dataset(config["calibration_path"]), config)
    test = _prepare(load_dataset(config["test_path"]), config)
    history = calibration.merge(test)
    start = config["test_start"]
    if start is not None:
        calibration = calibration.between(None, start - datetime.timedelta(days=1))
        test = test.between(start, None)
    k = history.n_members
    if history.records and config["window"] < k + 2:
        raise ConfigError(f"window must be at least {k + 2} for {k} ensemble members.")
    return Inputs(calibration, test, history)


@dataclass(frozen=True, eq=False)
class _WorkerState:
    config: models.RunConfig
    history: Dataset
    out_dir: Path
    correlations: Mapping[str, CorrelationMatrix] = field(default_factory=dict)
    normalization: NormalizationSpec | None = None
    rank_members: int = 0


_STATE: _WorkerState | None = None


def _init_worker(state: _WorkerState) -> None:
    global _STATE  # pylint: disable=global-statement
    _STATE = state


def _state() -> _WorkerState:
    assert _STATE is not None, "worker state is not initialised"
    return _STATE


def _run_units(
    fn: Callable[[T], U], units: Sequence[T], state: _WorkerState, jobs: int
) -> list[U]:
    """Apply ``fn`` to every unit, in order, in this process or a worker pool."""
    if jobs <= 1 or len(units) <= 1:
        _init_worker(state)
        return [fn(u) for u in units]
    chunksize = max(1, len(units) // (4 * jobs))
    with ProcessPoolExecutor(
        max_workers=jobs, initializer=_init_worker, initargs=(state,)
    ) as executor:
        return list(executor.map(fn, units, chunksize=chunksize))


def _units(dataset: Dataset) -> list[Unit]:
    return [(r.station, r.date) for r in dataset.records]


def _record(history: Dataset, station: str, date: datetime.date) -> StationDayRecord:
    return next(r for r in history.for_station(station) if r.date == date)


def _predictive(
    history: Dataset, station: str, date: datetime.date, window: int
) -> tuple[StationDayRecord, list[PredictiveMarginal]]:
    """Fit every variable's BMA model on its rolling window; raises WindowError
    or FitError when the day cannot be forecast."""
    record = _record(history, station, date)
    marginals = []
    for j, variable in enumerate(history.variables):
        model = fit_marginal(rolling_window(history, station, variable, date, window))
        marginals.append(model.predictive(record.forecasts[j]))
    return record, marginals


def _key(station: str, date: datetime.date) -> str:
    return f"{station} {date.isoformat()}"


# ---------------------------------------------------------------------------
# manifest
# ---------------------------------------------------------------------------


def _out_dir(config: models.RunConfig) -> Path:
    path = Path(config["output_dir"])
    path.mkdir(parents=True, exist_ok=True)
    return path


def _update_manifest(
    out_dir: Path,
    config: models.RunConfig,
    stage: str,
    record: models.StageRecord,
    inputs: Inputs | None = None,
) -> None:
    path = out_dir / consts.MANIFEST_FNAME
    manifest: models.RunManifest
    if path.exists():
        manifest = models.PydRunManifest.validate_python(load_json(path))
    else:
        manifest = {"version": VERSION, "config": {}, "datasets": {}, "stages": {}, "outputs": {}}
    manifest["version"] = VERSION
    manifest["config"] = models.PydRunConfig.dump_python(config, mode="json")
    if inputs is not None:
        manifest["datasets"] = {
            "calibration": inputs.calibration.manifest(),
            "test": inputs.test.manifest(),
        }
    manifest["stages"][stage] = record
    manifest["outputs"] = {
        p.relative_to(out_dir).as_posix(): sha256_file(p)
        for p in sorted(out_dir.rglob("*"))
        if p.is_file() and p != path
    }
    dump_json(path, manifest)


def _stage_record(
    started: float,
    cases: Mapping[str, int],
    skipped: Mapping[str, str],
    diagnostics: Mapping[str, Any] | None = None,
) -> models.StageRecord:
    return {
        "seconds": round(time.perf_counter() - started, 3),
        "cases": dict(cases),
        "skipped": dict(skipped),
        "diagnostics": dict(diagnostics or {}),
    }


# ---------------------------------------------------------------------------
# estimate
# ---------------------------------------------------------------------------


def _latent_unit(unit: Unit) -> tuple[LatentRecord | None, str]:
    station, date = unit
    state = _state()
    try:
        record, marginals = _predictive(state.history, station, date, state.config["window"])
    except (FitError, WindowError) as exc:
        return None, str(exc)
    return latent_from_observation(marginals, record.observations, station, date), ""


def estimate_stage(
    config: models.RunConfig, inputs: Inputs | None = None
) -> dict[str, CorrelationMatrix]:
    """Estimate and persist one copula correlation matrix per station from the
    calibration period."""
    started = time.perf_counter()
    inputs = inputs or load_inputs(config)
    out_dir = _out_dir(config)
    units = _units(inputs.calibration)
    state = _WorkerState(config, inputs.history, out_dir)
    results = _run_units(_latent_unit, units, state, config["jobs"])

    latents: dict[str, list[LatentRecord]] = {s: [] for s in inputs.calibration.stations}
    skipped_days: dict[str, int] = {}
    for (station, _), (latent, _) in zip(units, results):
        if latent is None:
            skipped_days[station] = skipped_days.get(station, 0) + 1
        else:
            latents[station].append(latent)

    matrices: dict[str, CorrelationMatrix] = {}
    skipped: dict[str, str] = {}
    clamped: dict[str, int] = {}
    p = len(inputs.variables)
    for station, records in latents.items():
        if len(records) < p + 1:
            reason = f"{len(records)} usable calibration days, at least {p + 1} needed"
            logger.warning("Skipping %s: %s.", station, reason)
            skipped[station] = reason
            continue
        try:
            matrix = estimate_correlation(records, inputs.variables)
        except BmaCopulaError as exc:
            logger.warning("Skipping %s: %s", station, exc)
            skipped[station] = str(exc)
            continue
        matrices[station] = matrix
        clamped[station] = int(sum(r.clamped.sum() for r in records))
        dump_json(out_dir / consts.CORR_FNAME_TEMPLATE.format(station=station), matrix.to_dict())
        logger.info("Estimated correlation for %s from %d days.", station, len(records))

    _update_manifest(
        out_dir,
        config,
        "estimate",
        _stage_record(
            started,
            {s: len(r) for s, r in latents.items()},
            skipped,
            {"skipped_days": skipped_days, "clamped_latents": clamped},
        ),
        inputs,
    )
    return matrices


def load_correlations(
    out_dir: Path, stations: Iterable[str], variables: Sequence[str]
) -> tuple[dict[str, CorrelationMatrix], dict[str, str]]:
    """Persisted matrices per station, and the reason for each missing one."""
    found: dict[str, CorrelationMatrix] = {}
    missing: dict[str, str] = {}
    for station in stations:
        path = out_dir / consts.CORR_FNAME_TEMPLATE.format(station=station)
        if not path.exists():
            missing[station] = f"no correlation file {path.name}"
            continue
        try:
            matrix = CorrelationMatrix.from_dict(load_json(path))
        except (BmaCopulaError, ValueError) as exc:
            missing[station] = f"unreadable correlation file {path.name}: {exc}"
            continue
        if matrix.variables != tuple(variables):
            missing[station] = f"{path.name} holds variables {list(matrix.variables)}"
            continue
        found[station] = matrix
    return found, missing


# ---------------------------------------------------------------------------
# forecast
# ---------------------------------------------------------------------------


def save_npz(path: Path, arrays: Mapping[str, npt.ArrayLike]) -> None:
    """Write a compressed npz archive whose bytes depend only on the arrays."""
    path.parent.mkdir(parents=True, exist_ok=True)
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_DEFLATED) as zf:
        for name in sorted(arrays):
            info = zipfile.ZipInfo(f"{name}.npy", date_time=_NPZ_DATE_TIME)
            info.compress_type = zipfile.ZIP_DEFLATED
            info.external_attr = 0o644 << 16
            with zf.open(info, "w") as f:
                np.lib.format.write_array(f, np.asanyarray(arrays[name]), allow_pickle=False)


def _forecast_path(station: str, date: datetime.date) -> str:
    return f"{consts.FORECAST_DIR}/{station}/{date.isoformat()}.npz"


def _forecast_unit(unit: Unit) -> tuple[str | None, str, npt.NDArray[np.float64] | None]:
    station, date = unit
    state = _state()
    config = state.config
    try:
        record, marginals = _predictive(state.history, station, date, config["window"])
    except (FitError, WindowError) as exc:
        return None, str(exc), None
    n = config["sample_size"]
    arrays: dict[str, npt.ArrayLike] = {
        "variables": np.array(state.history.variables),
        "observation": record.observations,
        "raw": record.forecasts.T,
        "models": np.array(
            [
                models.PydMarginalPayload.dump_json(m.model.to_dict()).decode("utf8")
                for m in marginals
            ]
        ),
    }
    diagnostic = None
    if "copula" in config["methods"]:
        rng = RngStream(config["seed"], stream_id(station, date.isoformat(), "joint"))
        joint = sample_joint(marginals, state.correlations[station], n, rng)
        arrays["copula"] = joint.values
        diagnostic = latent_correlation(marginals, joint)
    if "independence" in config["methods"]:
        # same stream as the copula draw: common random numbers for the comparison
        rng = RngStream(config["seed"], stream_id(station, date.isoformat(), "joint"))
        arrays["independence"] = independence_sample(marginals, n, rng).values
    rel = _forecast_path(station, date)
    save_npz(state.out_dir / rel, arrays)
    return rel, "", diagnostic


def forecast_stage(config: models.RunConfig, inputs: Inputs | None = None) -> dict[str, Any]:
    """Fit marginals and draw joint samples for every test station-day.

    Returns the forecast index also written to ``forecasts/index.json``.
    """
    started = time.perf_counter()
    inputs = inputs or load_inputs(config)
    out_dir = _out_dir(config)
    skipped: dict[str, str] = {}
    correlations: dict[str, CorrelationMatrix] = {}
    if "copula" in config["methods"]:
        correlations, skipped = load_correlations(
            out_dir, inputs.test.stations, inputs.variables
        )
        for station, reason in skipped.items():
            logger.warning("Cannot forecast %s: %s.", station, reason)
    units = [u for u in _units(inputs.test) if u[0] not in skipped]
    state = _WorkerState(config, inputs.history, out_dir, correlations)
    results = _run_units(_forecast_unit, units, state, config["jobs"])

    cases: list[dict[str, str]] = []
    counts: dict[str, int] = {s: 0 for s in inputs.test.stations}
    diagnostics: dict[str, list[npt.NDArray[np.float64]]] = {}
    for (station, date), (rel, reason, diagnostic) in zip(units, results):
        if rel is None:
            skipped[_key(station, date)] = reason
            continue
        cases.append({"station": station, "date": date.isoformat(), "path": rel})
        counts[station] += 1
        if diagnostic is not None:
            diagnostics.setdefault(station, []).append(diagnostic)

    index = {
        "variables": list(inputs.variables),
        "methods": list(config["methods"]),
        "n_members": inputs.n_members,
        "sample_size": config["sample_size"],
        "cases": cases,
    }
    forecast_dir = out_dir / consts.FORECAST_DIR
    forecast_dir.mkdir(parents=True, exist_ok=True)
    dump_json(forecast_dir / consts.FORECAST_INDEX_FNAME, index)
    with np.errstate(all="ignore"):
        latent = {
            s: np.nanmean(np.stack(mats), axis=0).tolist() for s, mats in diagnostics.items()
        }
    _update_manifest(
        out_dir,
        config,
        "forecast",
        _stage_record(started, counts, skipped, {"latent_correlation": latent}),
        inputs,
    )
    logger.info("Forecast %d station-days, skipped %d.", len(cases), len(skipped))
    return index


# ---------------------------------------------------------------------------
# verify
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class VerificationReport:
    """Pooled and per-station scores of every method."""

    methods: tuple[str, ...]
    variables: tuple[str, ...]
    pooled: Mapping[str, ScoreSummary]
    by_station: Mapping[str, Mapping[str, ScoreSummary]]
    histograms: Mapping[str, RankHistogram]
    crps: Mapping[str, Mapping[str, float]]
    """Mean univariate CRPS per method and variable."""
    null_delta: Mapping[str, float]
    normalization: NormalizationSpec
    station_normalization: Mapping[str, Mapping[str, Mapping[str, float]]]

    def scores_frame(self) -> pd.DataFrame:
        rows = [
            {"method": m, **self.pooled[m].to_dict(), "Delta_null99": self.null_delta[m]}
            for m in self.methods
        ]
        return pd.DataFrame(rows)

    def station_frame(self) -> pd.DataFrame:
        rows = [
            {"station": s, "method": m, **summary.to_dict()}
            for s, per_method in self.by_station.items()
            for m, summary in per_method.items()
        ]
        return pd.DataFrame(rows)

    def to_dict(self) -> dict[str, Any]:
        return {
            "methods": list(self.methods),
            "variables": list(self.variables),
            "pooled": {m: self.pooled[m].to_dict() for m in self.methods},
            "by_station": {
                s: {m: v.to_dict() for m, v in per_method.items()}
                for s, per_method in self.by_station.items()
            },
            "mrh": {m: list(h.counts) for m, h in self.histograms.items()},
            "delta_null99": dict(self.null_delta),
            "crps": {m: dict(v) for m, v in self.crps.items()},
            "normalization": {
                "pooled": self.normalization.to_dict(),
                "per_station": {s: dict(v) for s, v in self.station_normalization.items()},
            },
        }


def _case_unit(case: Mapping[str, str]) -> dict[str, tuple[CaseScore, list[float]]]:
    state = _state()
    spec = state.normalization
    assert spec is not None
    station, date = case["station"], case["date"]
    out: dict[str, tuple[CaseScore, list[float]]] = {}
    with np.load(state.out_dir / case["path"]) as archive:
        loaded = ForecastCase(
            station,
            datetime.date.fromisoformat(date),
            archive["observation"],
            {method: archive[method] for method in state.config["methods"]},
        )
    normalized = normalize([loaded], spec)[0]
    obs = normalized.observation
    for method, forecast in normalized.forecasts.items():
        rng = RngStream(state.config["seed"], stream_id(station, date, "verify", method))
        sampled = method != "raw"
        score = score_forecast(forecast, obs, rng, sampled, state.rank_members)
        crps = [ensemble_crps(forecast[:, j], float(obs[j])) for j in range(obs.shape[0])]
        out[method] = (score, crps)
    return out


def _station_stats(
    variables: Sequence[str], observations: npt.NDArray[np.float64]
) -> dict[str, dict[str, float]]:
    return {
        v: {"mean": float(observations[:, j].mean()), "sd": float(observations[:, j].std())}
        for j, v in enumerate(variables)
    }


def _write_report(out_dir: Path, report: VerificationReport) -> None:
    report.scores_frame().to_csv(
        out_dir / consts.SCORES_CSV_FNAME, index=False, float_format="%.6f", lineterminator="\n"
    )
    report.station_frame().to_csv(
        out_dir / consts.SCORES_BY_STATION_CSV_FNAME,
        index=False,
        float_format="%.6f",
        lineterminator="\n",
    )
    dump_json(out_dir / consts.SCORES_JSON_FNAME, report.to_dict())
    for method, histogram in report.histograms.items():
        pd.DataFrame(
            {"rank": np.arange(1, histogram.m + 2), "count": histogram.counts}
        ).to_csv(
            out_dir / consts.MRH_FNAME_TEMPLATE.format(method=method),
            index=False,
            lineterminator="\n",
        )


def verify_stage(config: models.RunConfig) -> VerificationReport:
    """Score every forecast case with normalised ES, EE, Δ and DS per method.

    Raises:
        DependencyError: the forecast stage has not been run.
        EmptyReportError: no cases could be scored.
    """
    started = time.perf_counter()
    out_dir = _out_dir(config)
    index_path = out_dir / consts.FORECAST_DIR / consts.FORECAST_INDEX_FNAME
    if not index_path.exists():
        raise DependencyError(
            f"No forecast index at {index_path}; run the forecast stage first."
        )
    index = load_json(index_path)
    methods = tuple(m for m in config["methods"] if m in index["methods"])
    variables = tuple(index["variables"])
    cases: list[dict[str, str]] = index["cases"]
    if not cases or not methods:
        raise EmptyReportError("No forecast cases to verify.")

    observations = []
    for case in cases:
        with np.load(out_dir / case["path"]) as archive:
            observations.append(archive["observation"])
    obs = np.vstack(observations)
    spec = NormalizationSpec.from_observations(obs, variables)
    by_station_obs: dict[str, list[int]] = {}
    for i, case in enumerate(cases):
        by_station_obs.setdefault(case["station"], []).append(i)
    station_stats = {s: _station_stats(variables, obs[idx]) for s, idx in by_station_obs.items()}

    rank_members = config["mrh_members"] or int(index["n_members"])
    state = _WorkerState(
        {**config, "methods": list(methods)},  # type: ignore[typeddict-item]
        Dataset((), 0, ()),
        out_dir,
        normalization=spec,
        rank_members=rank_members,
    )
    results = _run_units(_case_unit, cases, state, config["jobs"])

    pooled: dict[str, ScoreSummary] = {}
    by_station: dict[str, dict[str, ScoreSummary]] = {}
    histograms: dict[str, RankHistogram] = {}
    crps: dict[str, dict[str, float]] = {}
    null_delta: dict[str, float] = {}
    for method in methods:
        m = int(index["n_members"]) if method == "raw" else rank_members
        scores = [r[method][0] for r in results]
        histogram = RankHistogram.from_ranks((s.rank for s in scores), m)
        histograms[method] = histogram
        pooled[method] = summarize(scores, histogram)
        crps_values = np.array([r[method][1] for r in results])
        crps[method] = dict(zip(variables, crps_values.mean(axis=0).tolist()))
        null_delta[method] = uniform_null_delta_quantile(
            m, len(scores), _NULL_DELTA_LEVEL, RngStream(config["seed"], stream_id("null", method))
        )
        for station, idx in by_station_obs.items():
            station_scores = [scores[i] for i in idx]
            station_hist = RankHistogram.from_ranks((s.rank for s in station_scores), m)
            by_station.setdefault(station, {})[method] = summarize(station_scores, station_hist)

    report = VerificationReport(
        methods,
        variables,
        pooled,
        by_station,
        histograms,
        crps,
        null_delta,
        spec,
        station_stats,
    )
    _write_report(out_dir, report)
    _update_manifest(
        out_dir,
        config,
        "verify",
        _stage_record(started, {s: len(i) for s, i in by_station_obs.items()}, {}),
    )
    logger.info("Verified %d cases for methods %s.", len(cases), ", ".join(methods))
    return report


def run_all(config: models.RunConfig) -> VerificationReport:
    """Run estimate, forecast and verify in sequence."""
    inputs = load_inputs(config)
    if "copula" in config["methods"]:
        estimate_stage(config, inputs)
    forecast_stage(config, inputs)
    return verify_stage(config)
