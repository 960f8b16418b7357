"""Test the estimate, forecast and verify stages end to end on small synthetic runs."""

import datetime

import numpy as np
import pandas as pd
import pytest

from bmacopula import consts, pipeline
from bmacopula.copula import CorrelationMatrix
from bmacopula.data import generate_synthetic, save_dataset
from bmacopula.errors import ConfigError, DependencyError, SchemaError
from bmacopula.models import DEFAULT_SYNTHETIC_SPEC
from bmacopula.utils import dump_json, load_json, load_run_config, sha256_file


def _config(tmp_path, spec, out="out", **overrides):
    csv_path = tmp_path / "synthetic.csv"
    if not csv_path.exists():
        save_dataset(generate_synthetic(spec), csv_path)
    return load_run_config(
        None,
        {
            "calibration_path": str(csv_path),
            "test_path": str(csv_path),
            "test_start": spec["start_date"] + datetime.timedelta(days=60),
            "variables": spec["variables"],
            "window": spec["window"],
            "sample_size": 200,
            "seed": 11,
            "output_dir": str(tmp_path / out),
            **overrides,
        },
    )


def _output_hashes(out_dir):
    return {
        p.relative_to(out_dir).as_posix(): sha256_file(p)
        for p in sorted(out_dir.rglob("*"))
        if p.is_file() and p.name != consts.MANIFEST_FNAME
    }


def test_run_all_writes_every_artifact(tmp_path, small_spec):
    """A full run writes correlations, forecasts, reports and a manifest."""
    config = _config(tmp_path, small_spec)
    report = pipeline.run_all(config)
    out_dir = tmp_path / "out"

    for station in small_spec["stations"]:
        corr = load_json(out_dir / f"corr_{station}.json")
        assert corr["variables"] == ["mintemp", "maxtemp"]
        assert corr["n_records"] > 3
    index = load_json(out_dir / "forecasts" / "index.json")
    assert len(index["cases"]) == 2 * 30
    with np.load(out_dir / index["cases"][0]["path"]) as archive:
        assert archive["copula"].shape == (200, 2)
        assert archive["independence"].shape == (200, 2)
        assert archive["raw"].shape == (4, 2)
        assert archive["observation"].shape == (2,)

    scores = pd.read_csv(out_dir / "scores.csv")
    assert list(scores["method"]) == list(consts.METHODS)
    assert set(scores.columns) >= {"ES", "EE", "Delta", "DS", "cases", "Delta_null99"}
    assert (scores["cases"] == 60).all()
    assert (scores["ES"] > 0.0).all()
    assert report.pooled["copula"].cases == 60

    by_station = pd.read_csv(out_dir / "scores_by_station.csv")
    assert set(by_station["station"]) == set(small_spec["stations"])
    raw_mrh = pd.read_csv(out_dir / "mrh_raw.csv")
    assert list(raw_mrh["rank"]) == [1, 2, 3, 4, 5]
    assert raw_mrh["count"].sum() == 60
    assert pd.read_csv(out_dir / "mrh_copula.csv")["count"].sum() == 60

    manifest = load_json(out_dir / "manifest.json")
    assert set(manifest["stages"]) == {"estimate", "forecast", "verify"}
    assert manifest["outputs"] == _output_hashes(out_dir)
    assert manifest["datasets"]["test"]["start"] == "2007-03-02"


def test_results_do_not_depend_on_worker_count(tmp_path, small_spec):
    """One worker and two workers produce byte-identical outputs."""
    serial = _config(tmp_path, small_spec, out="serial", jobs=1)
    parallel = _config(tmp_path, small_spec, out="parallel", jobs=2)
    pipeline.run_all(serial)
    pipeline.run_all(parallel)
    assert _output_hashes(tmp_path / "serial") == _output_hashes(tmp_path / "parallel")


def test_stages_compose_like_run_all(tmp_path, small_spec):
    """Running the stages one by one matches a full run, and reruns are identical."""
    staged = _config(tmp_path, small_spec, out="staged")
    pipeline.estimate_stage(staged)
    pipeline.forecast_stage(staged)
    pipeline.verify_stage(staged)
    full = _config(tmp_path, small_spec, out="full")
    pipeline.run_all(full)
    first = _output_hashes(tmp_path / "full")
    assert _output_hashes(tmp_path / "staged") == first
    pipeline.run_all(full)
    assert _output_hashes(tmp_path / "full") == first


def test_copula_and_independence_share_random_numbers(tmp_path, small_spec):
    """With an identity correlation both methods draw the same sample."""
    spec = {**small_spec, "correlation": [[1.0, 0.0], [0.0, 1.0]]}
    config = _config(tmp_path, spec)
    pipeline.estimate_stage(config)
    identity = CorrelationMatrix.identity(["mintemp", "maxtemp"])
    dump_json(tmp_path / "out" / "corr_KSEA.json", identity.to_dict())
    index = pipeline.forecast_stage(config)
    case = next(c for c in index["cases"] if c["station"] == "KSEA")
    with np.load(tmp_path / "out" / case["path"]) as archive:
        np.testing.assert_array_equal(archive["copula"], archive["independence"])


def test_missing_correlation_skips_station(tmp_path, small_spec):
    """A station without a correlation file is skipped by the forecast stage."""
    config = _config(tmp_path, small_spec)
    pipeline.estimate_stage(config)
    (tmp_path / "out" / "corr_KPDX.json").unlink()
    index = pipeline.forecast_stage(config)
    assert {c["station"] for c in index["cases"]} == {"KSEA"}
    manifest = load_json(tmp_path / "out" / "manifest.json")
    assert "KPDX" in manifest["stages"]["forecast"]["skipped"]


def test_methods_without_copula_need_no_estimate(tmp_path, small_spec):
    """Raw and independence forecasts run without correlation files."""
    config = _config(tmp_path, small_spec, methods=["raw", "independence"])
    report = pipeline.run_all(config)
    assert report.methods == ("raw", "independence")
    assert not list((tmp_path / "out").glob("corr_*.json"))


def test_rank_histogram_size_follows_mrh_members(tmp_path, small_spec):
    """Sampled methods are ranked against the configured number of members."""
    config = _config(tmp_path, small_spec, methods=["raw", "copula"], mrh_members=10)
    report = pipeline.run_all(config)
    assert report.histograms["copula"].m == 10
    assert report.histograms["raw"].m == 4


def test_verify_requires_forecasts(tmp_path, small_spec):
    """Verification before forecasting is a dependency error."""
    config = _config(tmp_path, small_spec)
    with pytest.raises(DependencyError):
        pipeline.verify_stage(config)


def test_window_must_cover_members(tmp_path, small_spec):
    """A window shorter than K + 2 days is rejected."""
    config = _config(tmp_path, small_spec, window=5)
    with pytest.raises(ConfigError):
        pipeline.load_inputs(config)


def test_configured_variables_must_be_in_dataset(tmp_path, small_spec):
    """The default five variables cannot run on a two-variable dataset."""
    config = _config(tmp_path, small_spec, variables=list(consts.VARIABLES))
    with pytest.raises(SchemaError, match="maxwsp"):
        pipeline.load_inputs(config)


def test_all_five_variables(tmp_path):
    """Wind and precipitation marginals run through the whole pipeline."""
    spec = {
        **DEFAULT_SYNTHETIC_SPEC,
        "stations": ["STN001"],
        "days": 80,
        "members": 4,
        "member_bias": [0.3, -0.2, 0.1, 0.0],
        "window": 14,
    }
    config = _config(tmp_path, spec)
    report = pipeline.run_all(config)
    assert report.variables == tuple(consts.VARIABLES)
    assert report.pooled["copula"].cases > 0
    # four members cannot span five dimensions
    assert report.pooled["raw"].degenerate == report.pooled["raw"].cases
    with np.load(tmp_path / "out" / load_json(
        tmp_path / "out" / "forecasts" / "index.json"
    )["cases"][0]["path"]) as archive:
        precip = archive["copula"][:, consts.VARIABLES.index("precip")]
        assert np.all(precip >= 0.0)


@pytest.mark.slow
def test_correlation_recovery_on_long_calibration(tmp_path):
    """Two thousand calibration days recover the generating correlation."""
    spec = {
        **DEFAULT_SYNTHETIC_SPEC,
        "stations": ["STN001"],
        "days": 2100,
        "variables": ["mintemp", "maxtemp"],
        "correlation": [[1.0, 0.239], [0.239, 1.0]],
    }
    csv_path = tmp_path / "synthetic.csv"
    save_dataset(generate_synthetic(spec), csv_path)
    config = load_run_config(
        None,
        {
            "calibration_path": str(csv_path),
            "test_path": str(csv_path),
            "test_start": spec["start_date"] + datetime.timedelta(days=2080),
            "variables": spec["variables"],
            "output_dir": str(tmp_path / "out"),
            "methods": ["copula"],
        },
    )
    matrices = pipeline.estimate_stage(config)
    assert matrices["STN001"].entry("mintemp", "maxtemp") == pytest.approx(0.239, abs=0.05)


@pytest.mark.slow
def test_full_correlation_matrix_recovery(tmp_path):
    """All five variables' latent correlations are recovered from long calibration runs."""
    spec = {**DEFAULT_SYNTHETIC_SPEC, "days": 2100}
    csv_path = tmp_path / "synthetic.csv"
    save_dataset(generate_synthetic(spec), csv_path)
    config = load_run_config(
        None,
        {
            "calibration_path": str(csv_path),
            "test_path": str(csv_path),
            "test_start": spec["start_date"] + datetime.timedelta(days=2080),
            "variables": spec["variables"],
            "output_dir": str(tmp_path / "out"),
            "methods": ["copula"],
            "jobs": 4,
        },
    )
    matrices = pipeline.estimate_stage(config)
    assert set(matrices) == set(spec["stations"])
    mean = np.mean([m.values for m in matrices.values()], axis=0)
    np.testing.assert_allclose(mean, np.array(consts.REFERENCE_CORRELATION), atol=0.05)


@pytest.mark.slow
def test_copula_beats_independence_on_correlated_weather(tmp_path):
    """With strongly correlated observations the copula is better calibrated and
    sharper than independence, which beats the underdispersed raw ensemble."""
    spec = {
        **DEFAULT_SYNTHETIC_SPEC,
        "stations": ["STN001"],
        "days": 4100,
        "variables": ["mintemp", "maxtemp"],
        "correlation": [[1.0, 0.85], [0.85, 1.0]],
    }
    csv_path = tmp_path / "synthetic.csv"
    save_dataset(generate_synthetic(spec), csv_path)
    config = load_run_config(
        None,
        {
            "calibration_path": str(csv_path),
            "test_path": str(csv_path),
            "test_start": spec["start_date"] + datetime.timedelta(days=2050),
            "variables": spec["variables"],
            "output_dir": str(tmp_path / "out"),
            "sample_size": 1000,
            "seed": 3,
            "jobs": 2,
        },
    )
    pipeline.run_all(config)
    report = pipeline.verify_stage(config)
    copula, independence, raw = (report.pooled[m] for m in ("copula", "independence", "raw"))
    assert copula.cases >= 2000

    assert copula.delta < independence.delta < raw.delta
    assert copula.es <= independence.es + 3.0 * independence.es_se
    assert copula.ds < independence.ds
    assert copula.ee == pytest.approx(independence.ee, abs=3.0 * independence.ee_se)
    for variable in spec["variables"]:
        assert report.crps["copula"][variable] == pytest.approx(
            report.crps["independence"][variable], rel=0.02
        )
