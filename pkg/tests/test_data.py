"""Test dataset loading, windows and synthetic generation in bmacopula.data."""

import datetime

import numpy as np
import pytest

from bmacopula import consts
from bmacopula.data import (
    Dataset,
    StationDayRecord,
    generate_synthetic,
    load_dataset,
    rolling_window,
    save_dataset,
)
from bmacopula.errors import ConfigError, DomainError, ParseError, SchemaError, WindowError
from bmacopula.models import DEFAULT_SYNTHETIC_SPEC

HEADER = "station,date,variable,member_1,member_2,obs\n"


def _write(tmp_path, text, name="data.csv"):
    path = tmp_path / name
    path.write_text(text, encoding="utf8")
    return path


def _daily(days, station="KSEA", start=datetime.date(2008, 1, 1), skip=()):
    records = tuple(
        StationDayRecord(
            station,
            start + datetime.timedelta(days=t),
            np.array([[float(t), float(t) + 0.5]]),
            np.array([float(t) + 0.2]),
        )
        for t in range(days)
        if t not in skip
    )
    return Dataset(("maxtemp",), 2, records)


def test_empty_file(tmp_path):
    """An empty file is an empty dataset."""
    dataset = load_dataset(_write(tmp_path, ""))
    assert len(dataset) == 0
    assert dataset.dropped == 0


def test_incomplete_station_days_dropped(tmp_path):
    """Missing values or missing variable rows drop the station-day."""
    text = HEADER + (
        "KSEA,2008-01-01,maxtemp,10.5,11.0,10.8\n"
        "KSEA,2008-01-01,mintemp,2.0,3.0,2.5\n"
        "KSEA,2008-01-02,maxtemp,9.0,9.5,\n"
        "KSEA,2008-01-02,mintemp,1.0,1.5,1.2\n"
        "KPDX,2008-01-01,maxtemp,12.0,12.5,12.1\n"
    )
    dataset = load_dataset(_write(tmp_path, text))
    assert len(dataset) == 1
    assert dataset.dropped == 2
    record = dataset.records[0]
    assert dataset.variables == ("mintemp", "maxtemp")
    assert (record.station, record.date) == ("KSEA", datetime.date(2008, 1, 1))
    np.testing.assert_array_equal(record.forecasts, [[2.0, 3.0], [10.5, 11.0]])
    np.testing.assert_array_equal(record.observations, [2.5, 10.8])
    assert dataset.manifest()["dropped"] == 2


@pytest.mark.parametrize(
    ("row", "line"),
    [
        ("KSEA,2008-01-02,maxtemp,abc,1.0,1.0\n", 3),
        ("KSEA,2008-13-02,maxtemp,1.0,1.0,1.0\n", 3),
        (",2008-01-02,maxtemp,1.0,1.0,1.0\n", 3),
        ("KSEA,2008-01-01,maxtemp,1.0,1.0,1.0\n", 3),
        ("KSEA,2008-01-02,maxtemp,inf,1.0,1.0\n", 3),
        ("KSEA,2008-01-02,precip,1.0,-1.0,1.0\n", 3),
    ],
)
def test_parse_errors_report_line(tmp_path, row, line):
    """Malformed rows are reported with their line number."""
    text = HEADER + "KSEA,2008-01-01,maxtemp,1.0,1.0,1.0\n" + row
    with pytest.raises(ParseError) as excinfo:
        load_dataset(_write(tmp_path, text))
    assert excinfo.value.line == line


def test_units_line_shifts_line_numbers(tmp_path):
    """Line numbers count the units line."""
    text = "# units: maxtemp=degC\n" + HEADER + "KSEA,2008-01-01,maxtemp,1.0,x,1.0\n"
    with pytest.raises(ParseError) as excinfo:
        load_dataset(_write(tmp_path, text))
    assert excinfo.value.line == 3


def test_schema_errors(tmp_path):
    """Unknown variables, columns and units are schema errors."""
    with pytest.raises(SchemaError, match="humidity"):
        load_dataset(_write(tmp_path, HEADER + "KSEA,2008-01-01,humidity,1,1,1\n"))
    with pytest.raises(SchemaError):
        load_dataset(
            _write(tmp_path, "station,date,variable,member_1,extra,obs\nKSEA,2008-01-01,maxtemp,1,1,1\n")
        )
    with pytest.raises(SchemaError):
        load_dataset(_write(tmp_path, "station,date,member_1,obs\nKSEA,2008-01-01,1,1\n"))
    with pytest.raises(SchemaError, match="degC"):
        load_dataset(
            _write(tmp_path, "# units: maxtemp=degF\n" + HEADER + "KSEA,2008-01-01,maxtemp,1,1,1\n")
        )


def test_save_and_load_preserve_dataset(tmp_path, small_spec):
    """Saving and loading reproduces every value exactly."""
    dataset = generate_synthetic(small_spec)
    path = tmp_path / "synthetic.csv"
    save_dataset(dataset, path)
    assert path.read_text(encoding="utf8").startswith("# units: mintemp=degC maxtemp=degC\n")
    assert load_dataset(path) == dataset


def test_rolling_window_takes_most_recent_days():
    """The window is the `width` complete days just before the target."""
    dataset = _daily(61)
    target = datetime.date(2008, 1, 1) + datetime.timedelta(days=60)
    window = rolling_window(dataset, "KSEA", "maxtemp", target, width=40)
    assert window.n_pairs == 40
    assert window.start == target - datetime.timedelta(days=40)
    assert window.end == target - datetime.timedelta(days=1)
    np.testing.assert_array_equal(window.forecasts[:, 0], np.arange(20.0, 60.0))
    np.testing.assert_array_equal(window.observations, np.arange(20.0, 60.0) + 0.2)


def test_rolling_window_skips_gaps():
    """Missing days are skipped, so the window reaches further back."""
    dataset = _daily(61, skip=(50, 51, 52))
    target = datetime.date(2008, 1, 1) + datetime.timedelta(days=60)
    window = rolling_window(dataset, "KSEA", "maxtemp", target, width=40)
    assert window.n_pairs == 40
    assert window.start == datetime.date(2008, 1, 1) + datetime.timedelta(days=17)


def test_rolling_window_errors():
    """Short histories, absent targets and unknown variables are rejected."""
    dataset = _daily(40)
    with pytest.raises(WindowError) as excinfo:
        rolling_window(dataset, "KSEA", "maxtemp", datetime.date(2008, 2, 9), width=40)
    assert excinfo.value.available == 39
    assert excinfo.value.width == 40
    with pytest.raises(DomainError):
        rolling_window(dataset, "KSEA", "maxtemp", datetime.date(2009, 1, 1))
    with pytest.raises(SchemaError):
        rolling_window(dataset, "KSEA", "precip", datetime.date(2008, 2, 9))


def test_dataset_selection():
    """Variable, station and date selections keep records consistent."""
    dataset = _daily(10).merge(_daily(5, station="KPDX"))
    assert dataset.stations == ("KPDX", "KSEA")
    assert len(dataset.between(datetime.date(2008, 1, 3), datetime.date(2008, 1, 4))) == 4
    assert len(dataset.select_stations(["KPDX"])) == 5
    with pytest.raises(SchemaError):
        dataset.select_variables(["precip"])
    with pytest.raises(SchemaError):
        dataset.merge(Dataset(("mintemp",), 2, _daily(1).records))
    manifest = dataset.manifest()
    assert (manifest["start"], manifest["end"], manifest["n_records"]) == (
        "2008-01-01",
        "2008-01-10",
        15,
    )


def test_merge_keeps_first_record():
    """Station-days present in both datasets keep the first dataset's values."""
    first = _daily(3)
    record = first.records[0]
    other = Dataset(
        ("maxtemp",),
        2,
        (StationDayRecord("KSEA", record.date, np.array([[9.0, 9.0]]), np.array([9.0])),),
    )
    merged = first.merge(other)
    assert len(merged) == 3
    assert merged.records[0] == record


def test_synthetic_is_reproducible(small_spec):
    """Equal seeds give equal datasets; other seeds differ."""
    assert generate_synthetic(small_spec) == generate_synthetic(small_spec)
    assert generate_synthetic(small_spec) != generate_synthetic({**small_spec, "seed": 8})
    dataset = generate_synthetic(small_spec)
    assert len(dataset) == 2 * 90
    assert dataset.variables == ("mintemp", "maxtemp")


def test_synthetic_default_spec_respects_supports():
    """Wind and precipitation stay nonnegative and precipitation has dry days."""
    dataset = generate_synthetic({**DEFAULT_SYNTHETIC_SPEC, "stations": ["STN001"], "days": 120})
    assert dataset.variables == tuple(consts.VARIABLES)
    obs = np.array([r.observations for r in dataset.records])
    forecasts = np.array([r.forecasts for r in dataset.records])
    for variable in ("maxwsp", "precip"):
        j = dataset.variables.index(variable)
        assert np.all(obs[:, j] >= 0.0)
        assert np.all(forecasts[:, j] >= 0.0)
    precip = obs[:, dataset.variables.index("precip")]
    assert 0 < np.count_nonzero(precip == 0.0) < precip.size


@pytest.mark.parametrize(
    "change",
    [
        {"member_bias": [0.0]},
        {"days": 12},
        {"correlation": [[1.0, 1.5], [1.5, 1.0]]},
        {"variables": ["mintemp", "humidity"]},
        {"stations": []},
    ],
)
def test_synthetic_rejects_invalid_spec(small_spec, change):
    """Invalid specs raise a configuration error."""
    with pytest.raises(ConfigError):
        generate_synthetic({**small_spec, **change})
