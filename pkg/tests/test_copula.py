"""Test latent transforms, correlation estimation and joint sampling."""

import datetime
import logging

import numpy as np
import pytest
from scipy import special, stats

from bmacopula import consts, copula
from bmacopula.copula import CorrelationMatrix, LatentRecord
from bmacopula.errors import DecompositionError, DomainError, EstimationError
from bmacopula.marginals import GammaBmaModel, GaussianBmaModel, PrecipBmaModel
from bmacopula.numerics import RngStream, stream_id

RHO = 0.239


def _normal(variable: str, mean: float = 0.0, sd: float = 1.0):
    model = GaussianBmaModel(
        variable=variable, weights=[1.0], intercepts=[mean], slopes=[0.0], variance=sd**2
    )
    return model.predictive([0.0])


def _mixture(variable: str):
    model = GaussianBmaModel(
        variable=variable,
        weights=[0.3, 0.7],
        intercepts=[0.0, 1.0],
        slopes=[1.0, 1.0],
        variance=2.0,
    )
    return model.predictive([10.0, 13.0])


def _precip(logit: float = 0.0):
    """A precipitation marginal with point mass expit(logit) at zero."""
    model = PrecipBmaModel(
        variable="precip",
        weights=[1.0],
        intercepts=[0.5],
        slopes=[0.5],
        logit_coefs=[[logit, 0.0, 0.0]],
        var_intercept=0.1,
        var_slope=0.05,
    )
    return model.predictive([1.0])


def _temperature_pair():
    return [_normal("mintemp"), _normal("maxtemp")]


def _target_matrix() -> CorrelationMatrix:
    return CorrelationMatrix(
        ("mintemp", "maxtemp", "pressure"),
        np.array([[1.0, RHO, -0.2], [RHO, 1.0, 0.4], [-0.2, 0.4, 1.0]]),
    )


def test_median_maps_to_zero():
    """Observations at the median have latent score 0."""
    record = copula.latent_from_observation([_normal("maxtemp", 4.0, 2.0)], [4.0])
    assert record.values[0] == pytest.approx(0.0, abs=1e-12)
    assert not record.censored[0]


def test_upper_quantile_maps_to_normal_quantile():
    """The 0.975 quantile of any marginal maps to Φ⁻¹(0.975)."""
    m = _mixture("maxtemp")
    record = copula.latent_from_observation([m], [m.quantile(0.975)])
    assert record.values[0] == pytest.approx(1.959963984540054, abs=1e-3)


def test_dry_observation_is_censored():
    """A zero amount becomes the censoring bound Φ⁻¹(α)."""
    m = _precip(logit=0.0)
    assert m.zero_mass == pytest.approx(0.5)
    record = copula.latent_from_observation([m], [0.0])
    assert record.censored[0]
    assert record.alpha[0] == pytest.approx(0.5)
    assert record.values[0] == pytest.approx(0.0, abs=1e-12)

    wet = copula.latent_from_observation([m], [m.quantile(0.75)])
    assert not wet.censored[0]
    assert wet.values[0] == pytest.approx(special.ndtri(0.75), abs=1e-6)


def test_saturated_cdf_is_clamped(caplog):
    """Far tail observations stay finite and are flagged."""
    with caplog.at_level(logging.WARNING, logger="bmacopula.copula"):
        record = copula.latent_from_observation(
            [_normal("maxtemp")], [60.0], station="KSEA", date=datetime.date(2008, 1, 1)
        )
    assert record.clamped[0]
    assert np.isfinite(record.values[0])
    assert record.values[0] == pytest.approx(special.ndtri(1.0 - 1e-12))
    assert "Clamped" in caplog.text


def test_observation_outside_support():
    """Negative amounts and wrong lengths are rejected."""
    with pytest.raises(DomainError):
        copula.latent_from_observation([_precip()], [-0.1])
    with pytest.raises(DomainError):
        copula.latent_from_observation(_temperature_pair(), [1.0])
    with pytest.raises(DomainError):
        copula.latent_from_observation([_normal("maxtemp")], [float("nan")])


def _records_from_normals(z: np.ndarray, marginals) -> list[LatentRecord]:
    return [copula.latent_from_observation(marginals, row) for row in z]


def test_estimate_recovers_known_correlation():
    """The estimator recovers the latent correlation of a Gaussian sample."""
    rng = np.random.default_rng(21)
    c = _target_matrix()
    z = rng.standard_normal((20000, 3)) @ c.cholesky.T
    marginals = [_normal(v) for v in c.variables]
    estimate = copula.estimate_correlation(_records_from_normals(z, marginals))
    assert estimate.variables == c.variables
    assert np.max(np.abs(estimate.values - c.values)) < 0.05
    assert estimate.n_records == 20000


def test_estimate_independent_scores():
    """Independent latent scores give correlations near zero."""
    rng = np.random.default_rng(22)
    z = rng.standard_normal((2000, 2))
    estimate = copula.estimate_correlation(_records_from_normals(z, _temperature_pair()))
    assert abs(estimate.entry("mintemp", "maxtemp")) < 4.0 / np.sqrt(2000)


def test_estimate_invariant_under_affine_rescaling():
    """Changing temperature units leaves the estimate unchanged."""
    rng = np.random.default_rng(23)
    z = rng.standard_normal((300, 2)) @ np.linalg.cholesky([[1.0, 0.6], [0.6, 1.0]]).T
    base = copula.estimate_correlation(_records_from_normals(z, _temperature_pair()))
    shifted_marginals = [_normal("mintemp", 32.0, 1.8), _normal("maxtemp", 32.0, 1.8)]
    shifted = copula.estimate_correlation(
        _records_from_normals(32.0 + 1.8 * z, shifted_marginals)
    )
    np.testing.assert_allclose(shifted.values, base.values, atol=1e-9)


def test_estimate_with_censored_entries():
    """Censored precipitation entries are imputed and the result is valid."""
    rng = np.random.default_rng(24)
    m_precip = _precip(logit=0.0)
    marginals = [_normal("maxtemp"), m_precip]
    z = rng.standard_normal((500, 2)) @ np.linalg.cholesky([[1.0, -0.5], [-0.5, 1.0]]).T
    rows = np.column_stack([z[:, 0], m_precip.quantiles(special.ndtr(z[:, 1]))])
    records = _records_from_normals(rows, marginals)
    assert any(r.censored[1] for r in records)
    estimate = copula.estimate_correlation(records)
    assert np.array_equal(np.diag(estimate.values), np.ones(2))
    assert estimate.entry("maxtemp", "precip") < 0.0


def test_estimate_rejects_degenerate_input():
    """Empty, too short and constant latent sets are errors."""
    marginals = _temperature_pair()
    with pytest.raises(EstimationError):
        copula.estimate_correlation([])
    two = _records_from_normals(np.array([[0.1, 0.2], [0.3, -0.1]]), marginals)
    with pytest.raises(EstimationError):
        copula.estimate_correlation(two)
    repeated = _records_from_normals(np.tile([0.5, 1.0], (10, 1)), marginals)
    with pytest.raises(EstimationError, match="mintemp"):
        copula.estimate_correlation(repeated)


def test_estimate_rejects_repeated_latent_vector():
    """A latent vector repeated on every day is rejected even when rounding leaves
    a tiny nonzero spread."""
    records = [
        LatentRecord(
            values=np.array([0.7, 2.2, 0.7]),
            censored=np.zeros(3, dtype=bool),
            alpha=np.zeros(3),
            clamped=np.zeros(3, dtype=bool),
            variables=("mintemp", "maxtemp", "pressure"),
        )
        for _ in range(7)
    ]
    with pytest.raises(EstimationError, match="zero variance"):
        copula.estimate_correlation(records)


def test_calm_wind_is_censored():
    """Wind below the calm threshold is censored at F(0.1), like the gamma fit."""
    model = GammaBmaModel(
        variable="maxwsp", weights=[1.0], intercepts=[0.0], slopes=[1.0],
        var_intercept=0.4, var_slope=0.2,
    )
    m = model.predictive([1.0])
    alpha = m.cdf(consts.WIND_CALM_THRESHOLD)
    for calm in (0.0, 0.05):
        record = copula.latent_from_observation([m], [calm])
        assert record.censored[0]
        assert record.alpha[0] == pytest.approx(alpha)
        assert record.values[0] == pytest.approx(special.ndtri(alpha))
    windy = copula.latent_from_observation([m], [3.0])
    assert not windy.censored[0]
    assert windy.values[0] == pytest.approx(special.ndtri(m.cdf(3.0)))

    imputed = copula._impute(record)  # pylint: disable=protected-access
    assert imputed[0] == pytest.approx(-stats.norm.pdf(special.ndtri(alpha)) / alpha)
    assert imputed[0] < record.values[0]


def test_correlation_matrix_validation():
    """Invalid matrices are rejected on construction."""
    with pytest.raises(DomainError):
        CorrelationMatrix(("a", "b"), np.array([[1.0, 0.2], [0.2, 0.99]]))
    with pytest.raises(DomainError):
        CorrelationMatrix(("a", "b", "c"), np.eye(2))
    with pytest.raises(DecompositionError):
        CorrelationMatrix(("a", "b"), np.array([[1.0, 1.5], [1.5, 1.0]]))


def test_correlation_payload_restores_matrix():
    """A persisted matrix restores with its metadata."""
    c = CorrelationMatrix(
        ("mintemp", "maxtemp"),
        np.array([[1.0, RHO], [RHO, 1.0]]),
        station="KSEA",
        start=datetime.date(2007, 1, 1),
        end=datetime.date(2007, 12, 31),
        n_records=300,
    )
    restored = CorrelationMatrix.from_dict(c.to_dict())
    assert np.array_equal(restored.values, c.values)
    assert restored.variables == c.variables
    assert (restored.station, restored.start, restored.end, restored.n_records) == (
        "KSEA",
        datetime.date(2007, 1, 1),
        datetime.date(2007, 12, 31),
        300,
    )
    bad = c.to_dict()
    bad["p"] = 3
    with pytest.raises(DomainError):
        CorrelationMatrix.from_dict(bad)


def test_sampling_is_reproducible():
    """Equal streams give bit-identical samples."""
    c = _target_matrix()
    marginals = [_mixture(v) for v in c.variables]
    a = copula.sample_joint(marginals, c, 500, RngStream(1, stream_id("KSEA", "joint")))
    b = copula.sample_joint(marginals, c, 500, RngStream(1, stream_id("KSEA", "joint")))
    assert np.array_equal(a.values, b.values)


def test_independence_is_identity_copula():
    """Independence sampling equals copula sampling with the identity matrix."""
    marginals = [_mixture("mintemp"), _mixture("maxtemp")]
    identity = CorrelationMatrix.identity(["mintemp", "maxtemp"])
    a = copula.independence_sample(marginals, 300, RngStream(4, 9))
    b = copula.sample_joint(marginals, identity, 300, RngStream(4, 9))
    assert np.array_equal(a.values, b.values)


def test_identity_sample_is_uncorrelated():
    """Identity copula samples show no cross correlation."""
    n = 20000
    marginals = [_mixture(v) for v in ("mintemp", "maxtemp", "pressure")]
    sample = copula.independence_sample(marginals, n, RngStream(2, 3))
    corr = np.corrcoef(sample.values, rowvar=False)
    off = corr[~np.eye(3, dtype=bool)]
    assert np.max(np.abs(off)) < 4.0 / np.sqrt(n)


def test_sample_preserves_marginals():
    """Each sample column follows its marginal distribution."""
    n = 5000
    c = _target_matrix()
    marginals = [_mixture(v) for v in c.variables]
    sample = copula.sample_joint(marginals, c, n, RngStream(5, 6))
    for j, m in enumerate(marginals):
        statistic = stats.kstest(sample.values[:, j], m.cdf).statistic
        assert statistic < 2.0 / np.sqrt(n)


def test_sample_recovers_latent_correlation():
    """The latent scores of a sample reproduce the copula matrix."""
    c = _target_matrix()
    marginals = [_mixture(v) for v in c.variables]
    sample = copula.sample_joint(marginals, c, 20000, RngStream(7, 8))
    assert np.max(np.abs(copula.latent_correlation(marginals, sample) - c.values)) < 0.05
    assert sample.latent is not None
    np.testing.assert_allclose(
        copula.latent_matrix(marginals, sample.values), sample.latent, atol=1e-4
    )


def test_precip_sample_has_point_mass():
    """Sampled amounts are nonnegative with the right share of zeros."""
    m = _precip(logit=0.4)
    marginals = [_normal("maxtemp"), m]
    c = CorrelationMatrix(("maxtemp", "precip"), np.array([[1.0, -0.3], [-0.3, 1.0]]))
    sample = copula.sample_joint(marginals, c, 20000, RngStream(9, 10))
    amounts = sample.column("precip")
    assert np.all(amounts >= 0.0)
    assert np.mean(amounts == 0.0) == pytest.approx(m.zero_mass, abs=0.02)
    latent = copula.latent_matrix(marginals, sample.values)
    assert np.all(np.isnan(latent[amounts == 0.0, 1]))


def test_sample_argument_checks():
    """Dimension and ordering mismatches are rejected."""
    c = _target_matrix()
    marginals = [_normal(v) for v in c.variables]
    rng = RngStream(0)
    with pytest.raises(DomainError):
        copula.sample_joint(marginals[:2], c, 10, rng)
    with pytest.raises(DomainError):
        copula.sample_joint(list(reversed(marginals)), c, 10, rng)
    with pytest.raises(DomainError):
        copula.sample_joint(marginals, c, 0, rng)
