"""Station-day datasets: CSV ingestion, rolling training windows and synthetic data.

Files are long-format CSV with one row per (station, date, variable)::

    # units: maxwsp=m/s precip=mm mintemp=degC maxtemp=degC pressure=mb
    station,date,variable,member_1,...,member_K,obs

The units line is optional. Missing values are empty fields.
"""

import datetime
import io
import logging
import math
import re
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np
import numpy.typing as npt
import pandas as pd
import pydantic
from scipy import special

from bmacopula import consts, models
from bmacopula.copula import CorrelationMatrix
from bmacopula.errors import (
    BmaCopulaError,
    ConfigError,
    DomainError,
    ParseError,
    SchemaError,
    WindowError,
)
from bmacopula.marginals import TrainingSet
from bmacopula.numerics import RngStream, gamma_moments_to_params, gamma_quantile, stream_id

logger = logging.getLogger(__name__)

UNITS_PREFIX = "# units:"
_KEY_COLUMNS = ("station", "date", "variable")
_MEMBER_RE = re.compile(r"member_(\d+)$")


@dataclass(frozen=True, eq=False)
class StationDayRecord:
    """Complete forecasts and observations of one station on one day."""

    station: str
    date: datetime.date
    forecasts: npt.NDArray[np.float64]
    """Ensemble members, shape (p, K)."""
    observations: npt.NDArray[np.float64]
    """Observations, shape (p,)."""

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, StationDayRecord):
            return NotImplemented
        return (
            self.station == other.station
            and self.date == other.date
            and np.array_equal(self.forecasts, other.forecasts)
            and np.array_equal(self.observations, other.observations)
        )

    __hash__ = None  # type: ignore[assignment]


@dataclass(frozen=True, eq=False)
class Dataset:
    """An immutable, complete-case collection of station-day records."""

    variables: tuple[str, ...]
    n_members: int
    records: tuple[StationDayRecord, ...]
    dropped: int = 0

    def __post_init__(self) -> None:
        ordered = tuple(sorted(self.records, key=lambda r: (r.station, r.date)))
        object.__setattr__(self, "records", ordered)
        object.__setattr__(self, "variables", tuple(self.variables))
        shape = (len(self.variables), self.n_members)
        for r in ordered:
            if r.forecasts.shape != shape or r.observations.shape != shape[:1]:
                raise DomainError(
                    f"Record {r.station} {r.date} does not match dataset shape {shape}."
                )

    def __len__(self) -> int:
        return len(self.records)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.variables == other.variables
            and self.n_members == other.n_members
            and self.records == other.records
        )

    __hash__ = None  # type: ignore[assignment]

    @cached_property
    def _by_station(self) -> dict[str, tuple[StationDayRecord, ...]]:
        out: dict[str, list[StationDayRecord]] = {}
        for r in self.records:
            out.setdefault(r.station, []).append(r)
        return {k: tuple(v) for k, v in out.items()}

    @property
    def stations(self) -> tuple[str, ...]:
        return tuple(self._by_station)

    def for_station(self, station: str) -> tuple[StationDayRecord, ...]:
        return self._by_station.get(station, ())

    def dates(self, station: str) -> list[datetime.date]:
        return [r.date for r in self.for_station(station)]

    def select_variables(self, variables: Sequence[str]) -> "Dataset":
        missing = [v for v in variables if v not in self.variables]
        if missing:
            raise SchemaError(f"Variables {missing} are not in the dataset.")
        idx = [self.variables.index(v) for v in variables]
        return Dataset(
            tuple(variables),
            self.n_members,
            tuple(
                StationDayRecord(r.station, r.date, r.forecasts[idx], r.observations[idx])
                for r in self.records
            ),
            self.dropped,
        )

    def select_stations(self, stations: Iterable[str]) -> "Dataset":
        keep = set(stations)
        return Dataset(
            self.variables,
            self.n_members,
            tuple(r for r in self.records if r.station in keep),
            self.dropped,
        )

    def between(
        self, start: datetime.date | None = None, end: datetime.date | None = None
    ) -> "Dataset":
        """Records with start <= date <= end; either bound may be open."""
        return Dataset(
            self.variables,
            self.n_members,
            tuple(
                r
                for r in self.records
                if (start is None or r.date >= start) and (end is None or r.date <= end)
            ),
            self.dropped,
        )

    def merge(self, other: "Dataset") -> "Dataset":
        """Union of two datasets; a station-day present in both keeps this one's record."""
        if not self.records:
            return other
        if not other.records:
            return self
        if other.variables != self.variables or other.n_members != self.n_members:
            raise SchemaError("Cannot merge datasets with different variables or sizes.")
        seen = {(r.station, r.date) for r in self.records}
        extra = tuple(r for r in other.records if (r.station, r.date) not in seen)
        return Dataset(
            self.variables,
            self.n_members,
            self.records + extra,
            self.dropped + other.dropped,
        )

    def manifest(self) -> models.DatasetManifest:
        dates = [r.date for r in self.records]
        return {
            "stations": list(self.stations),
            "variables": list(self.variables),
            "start": min(dates).isoformat() if dates else None,
            "end": max(dates).isoformat() if dates else None,
            "n_members": self.n_members,
            "n_records": len(self.records),
            "dropped": self.dropped,
        }


# ---------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------


def _parse_units(line: str) -> None:
    for item in line[len(UNITS_PREFIX) :].split():
        name, sep, unit = item.partition("=")
        if not sep:
            raise SchemaError(f"Malformed units entry {item!r}.")
        if name not in consts.VARIABLE_UNITS:
            raise SchemaError(f"Unknown variable {name!r} in units line.")
        if unit != consts.VARIABLE_UNITS[name]:
            raise SchemaError(
                f"{name} must be given in {consts.VARIABLE_UNITS[name]}, not {unit}."
            )


def _member_columns(columns: Sequence[str]) -> list[str]:
    for key in (*_KEY_COLUMNS, "obs"):
        if key not in columns:
            raise SchemaError(f"Missing required column {key!r}.")
    members = [c for c in columns if c not in (*_KEY_COLUMNS, "obs")]
    expected = [f"member_{k}" for k in range(1, len(members) + 1)]
    if not members or members != expected:
        unknown = [c for c in members if not _MEMBER_RE.match(c)]
        if unknown:
            raise SchemaError(f"Unknown column(s) {unknown}.")
        raise SchemaError("Member columns must be member_1..member_K in order.")
    return members


def _parse_numbers(raw: pd.DataFrame, lines: npt.NDArray[np.int64]) -> npt.NDArray[np.float64]:
    cells = raw.to_numpy(dtype=str)
    empty = np.char.str_len(np.char.strip(cells)) == 0
    try:
        values = np.where(empty, "nan", cells).astype(float)
    except ValueError:
        for i, row in enumerate(cells):
            for cell, blank in zip(row, empty[i]):
                if blank:
                    continue
                try:
                    float(cell)
                except ValueError:
                    raise ParseError(f"non-numeric value {cell!r}", int(lines[i])) from None
        raise
    bad = ~np.isfinite(values) & ~empty
    if np.any(bad):
        i = int(np.argmax(bad.any(axis=1)))
        raise ParseError("values must be finite numbers or empty", int(lines[i]))
    return values


def load_dataset(path: str | Path) -> Dataset:
    """Load a long-format CSV dataset.

    Station-days with any missing forecast or observation, or missing a variable
    row, are dropped and counted in ``Dataset.dropped``.

    Raises:
        ParseError: malformed rows, with their line number.
        SchemaError: unknown variables or columns, unit mismatches.
    """
    text = Path(path).read_text(encoding="utf8")
    offset = 2
    if text.startswith(UNITS_PREFIX):
        units, _, text = text.partition("\n")
        _parse_units(units.strip())
        offset += 1
    if not text.strip():
        return Dataset((), 0, ())
    try:
        df = pd.read_csv(io.StringIO(text), dtype=str, keep_default_na=False)
    except pd.errors.ParserError as exc:
        match = re.search(r"line (\d+)", str(exc))
        line = int(match.group(1)) + offset - 2 if match else None
        raise ParseError(f"malformed row ({exc})", line) from exc
    members = _member_columns(list(df.columns))
    if df.empty:
        return Dataset((), len(members), ())
    lines = df.index.to_numpy() + offset

    unknown = ~df["variable"].isin(consts.VARIABLES)
    if unknown.any():
        i = int(np.argmax(unknown.to_numpy()))
        raise SchemaError(f"line {lines[i]}: unknown variable {df['variable'].iloc[i]!r}.")
    if (df["station"].str.strip() == "").any():
        i = int(np.argmax((df["station"].str.strip() == "").to_numpy()))
        raise ParseError("empty station id", int(lines[i]))
    dates = pd.to_datetime(df["date"], format="%Y-%m-%d", errors="coerce")
    if dates.isna().any():
        i = int(np.argmax(dates.isna().to_numpy()))
        raise ParseError(f"invalid date {df['date'].iloc[i]!r}", int(lines[i]))
    duplicated = df.duplicated(list(_KEY_COLUMNS))
    if duplicated.any():
        i = int(np.argmax(duplicated.to_numpy()))
        raise ParseError("duplicate station, date and variable", int(lines[i]))

    values = _parse_numbers(df[[*members, "obs"]], lines)
    nonneg = df["variable"].isin(consts.NONNEGATIVE_VARIABLES).to_numpy()
    negative = nonneg & np.any(values < 0.0, axis=1)
    if np.any(negative):
        i = int(np.argmax(negative))
        raise ParseError(f"negative {df['variable'].iloc[i]} value", int(lines[i]))

    variables = tuple(v for v in consts.VARIABLES if v in set(df["variable"]))
    order = {v: j for j, v in enumerate(variables)}
    frame = pd.DataFrame(
        {
            "station": df["station"].to_numpy(),
            "date": dates.dt.date.to_numpy(),
            "var_idx": df["variable"].map(order).to_numpy(),
            "row": np.arange(len(df)),
            "complete": np.all(np.isfinite(values), axis=1),
        }
    )
    records: list[StationDayRecord] = []
    dropped = 0
    p = len(variables)
    for (station, date), group in frame.groupby(["station", "date"], sort=True):
        if len(group) != p or not group["complete"].all():
            dropped += 1
            continue
        rows = group.sort_values("var_idx")["row"].to_numpy()
        block = values[rows]
        records.append(StationDayRecord(str(station), date, block[:, :-1], block[:, -1]))
    if dropped:
        logger.info("Dropped %d incomplete station-days from %s.", dropped, path)
    return Dataset(variables, len(members), tuple(records), dropped)


def save_dataset(dataset: Dataset, path: str | Path) -> None:
    """Write ``dataset`` as long-format CSV with 17 significant digits."""
    members = [f"member_{k}" for k in range(1, dataset.n_members + 1)]
    rows = [
        (r.station, r.date.isoformat(), v, *r.forecasts[j], r.observations[j])
        for r in dataset.records
        for j, v in enumerate(dataset.variables)
    ]
    frame = pd.DataFrame(rows, columns=[*_KEY_COLUMNS, *members, "obs"])
    units = " ".join(f"{v}={consts.VARIABLE_UNITS[v]}" for v in dataset.variables)
    with open(path, "w", encoding="utf8", newline="") as f:
        f.write(f"{UNITS_PREFIX} {units}\n")
        frame.to_csv(f, index=False, float_format="%.17g", lineterminator="\n")


def rolling_window(
    dataset: Dataset,
    station: str,
    variable: str,
    target_date: datetime.date,
    width: int = consts.DEFAULT_WINDOW,
) -> TrainingSet:
    """The ``width`` most recent complete days strictly before ``target_date``."""
    if variable not in dataset.variables:
        raise SchemaError(f"Variable {variable!r} is not in the dataset.")
    records = dataset.for_station(station)
    if not any(r.date == target_date for r in records):
        raise DomainError(f"{station} has no record for {target_date}.")
    history = [r for r in records if r.date < target_date]
    if len(history) < width:
        raise WindowError(len(history), width)
    window = history[-width:]
    j = dataset.variables.index(variable)
    return TrainingSet(
        variable,
        np.vstack([r.forecasts[j] for r in window]),
        np.array([r.observations[j] for r in window]),
        start=window[0].date,
        end=window[-1].date,
    )


# ---------------------------------------------------------------------------
# synthetic data
# ---------------------------------------------------------------------------

# climatological mean, seasonal amplitude and observation spread
_GAUSSIAN_CLIMATE: Mapping[str, tuple[float, float, float]] = {
    "mintemp": (8.0, 5.0, 2.0),
    "maxtemp": (15.0, 7.0, 2.5),
    "pressure": (1015.0, 4.0, 4.0),
}
_AR_COEF = 0.6


def _validate_spec(spec: Mapping[str, object]) -> models.SyntheticSpec:
    try:
        valid = models.PydSyntheticSpec.validate_python(spec)
    except pydantic.ValidationError as exc:
        raise ConfigError(f"Invalid synthetic spec: {exc}") from exc
    p = len(valid["variables"])
    if len(set(valid["variables"])) != p:
        raise ConfigError("Synthetic spec variables must be distinct.")
    if len(valid["member_bias"]) != valid["members"]:
        raise ConfigError("member_bias needs one entry per ensemble member.")
    if valid["days"] <= valid["window"]:
        raise ConfigError("days must exceed the training window.")
    if not valid["stations"] or len(set(valid["stations"])) != len(valid["stations"]):
        raise ConfigError("Synthetic spec needs distinct, non-empty station ids.")
    try:
        CorrelationMatrix(tuple(valid["variables"]), np.asarray(valid["correlation"]))
    except (BmaCopulaError, ValueError) as exc:
        raise ConfigError(f"Invalid synthetic correlation matrix: {exc}") from exc
    return valid


def _station_block(
    spec: models.SyntheticSpec, rng: RngStream, chol: npt.NDArray[np.float64]
) -> tuple[npt.NDArray[np.float64], npt.NDArray[np.float64]]:
    """Forecasts (T, p, K) and observations (T, p) for one station."""
    days, p, k = spec["days"], len(spec["variables"]), spec["members"]
    bias = np.asarray(spec["member_bias"], dtype=float)
    noise = spec["member_noise"]
    season = np.sin(2.0 * math.pi * np.arange(days) / 365.25)

    shocks = rng.standard_normal((days, p)) * math.sqrt(1.0 - _AR_COEF**2)
    anomaly = np.empty((days, p))
    anomaly[0] = rng.standard_normal(p)
    for t in range(1, days):
        anomaly[t] = _AR_COEF * anomaly[t - 1] + shocks[t]
    u = np.clip(
        special.ndtr(rng.standard_normal((days, p)) @ chol.T),
        consts.LATENT_CLAMP,
        1.0 - consts.LATENT_CLAMP,
    )
    eps = rng.standard_normal((days, p, k))

    forecasts = np.empty((days, p, k))
    observations = np.empty((days, p))
    for j, variable in enumerate(spec["variables"]):
        a, e = anomaly[:, j], eps[:, j, :]
        if variable in _GAUSSIAN_CLIMATE:
            mean, amplitude, spread = _GAUSSIAN_CLIMATE[variable]
            signal = mean + amplitude * season + 2.0 * spread * a
            observations[:, j] = signal + spread * special.ndtri(u[:, j])
            forecasts[:, j] = signal[:, None] + spread * (bias + noise * e)
        elif variable == "maxwsp":
            signal = np.maximum(5.0 + 1.5 * season + 2.0 * a, 0.5)
            shape, scale = gamma_moments_to_params(signal, 1.0 + 0.2 * signal)
            observations[:, j] = gamma_quantile(u[:, j], shape, scale)
            spread = np.sqrt(1.0 + 0.2 * signal)[:, None]
            forecasts[:, j] = np.maximum(signal[:, None] + spread * (bias + noise * e), 0.0)
        else:
            wetness = 0.2 + a
            r = np.maximum(wetness, 0.0)
            p0 = special.expit(0.8 - 2.2 * r)
            shape, scale = gamma_moments_to_params(0.4 + 0.8 * r, 0.08 + 0.04 * r)
            wet = u[:, j] > p0
            level = np.where(wet, (u[:, j] - p0) / (1.0 - p0), 0.0)
            observations[:, j] = np.where(wet, gamma_quantile(level, shape, scale) ** 3, 0.0)
            member = wetness[:, None] + 0.3 * (bias + noise * e)
            forecasts[:, j] = np.maximum(member, 0.0) ** 3
    return forecasts, observations


def generate_synthetic(spec: Mapping[str, object]) -> Dataset:
    """Draw a dataset whose observations follow a known Gaussian copula.

    Each variable has a hidden daily signal (seasonal cycle plus AR(1) anomaly).
    Observations are drawn from the signal-conditional marginal at copula-
    correlated quantile levels; ensemble members are the signal plus
    member-specific bias and noise.

    Raises:
        ConfigError: the spec is invalid.
    """
    valid = _validate_spec(spec)
    variables = tuple(valid["variables"])
    chol = CorrelationMatrix(variables, np.asarray(valid["correlation"])).cholesky
    dates = [valid["start_date"] + datetime.timedelta(days=t) for t in range(valid["days"])]
    records: list[StationDayRecord] = []
    for station in valid["stations"]:
        rng = RngStream(valid["seed"], stream_id("synthetic", station))
        forecasts, observations = _station_block(valid, rng, chol)
        records.extend(
            StationDayRecord(station, d, forecasts[t], observations[t])
            for t, d in enumerate(dates)
        )
    logger.info(
        "Generated %d synthetic station-days for %d stations.",
        len(records),
        len(valid["stations"]),
    )
    return Dataset(variables, valid["members"], tuple(records))
