"""Tests for the piecewise-linear viral concentration trajectory."""

import math

import numpy as np
import pytest

from error_handler import ParameterDomainError
from modules.kinetics import (
    HYPER_NAMES,
    PopulationHyperparams,
    TrajectoryParams,
    sample_trajectories,
    sample_trajectory,
    viral_concentration,
    viral_concentration_array,
)


@pytest.fixture
def random_triples():
    rng = np.random.default_rng(11)
    n = 10_000
    return (
        rng.uniform(1.0, 12.0, n),
        rng.uniform(0.1, 10.0, n),
        rng.uniform(0.1, 20.0, n),
    )


class TestTrajectoryGeometry:
    """Shape of f(tau) at the corners of the trajectory."""

    def test_starts_at_zero(self, random_triples):
        p, d_i2p, d_p2c = random_triples
        values = viral_concentration_array(np.zeros_like(p), p, d_i2p, d_p2c)
        np.testing.assert_array_equal(values, 0.0)

    def test_reaches_peak(self, random_triples):
        p, d_i2p, d_p2c = random_triples
        values = viral_concentration_array(d_i2p, p, d_i2p, d_p2c)
        np.testing.assert_allclose(values, p, rtol=1e-12)

    def test_clears_to_zero(self, random_triples):
        p, d_i2p, d_p2c = random_triples
        values = viral_concentration_array(d_i2p + d_p2c, p, d_i2p, d_p2c)
        np.testing.assert_allclose(values, 0.0, atol=1e-12 * p.max())

    def test_continuous_at_peak(self, random_triples):
        p, d_i2p, d_p2c = random_triples
        eps = 1e-9
        before = viral_concentration_array(d_i2p - eps, p, d_i2p, d_p2c)
        after = viral_concentration_array(d_i2p + eps, p, d_i2p, d_p2c)
        np.testing.assert_allclose(before, after, atol=1e-6)

    def test_scalar_matches_array(self):
        params = TrajectoryParams(p=8.0, d_i2p=4.0, d_p2c=8.0)
        taus = [0.0, 1.0, 4.0, 6.0, 12.0, 15.0]
        expected = viral_concentration_array(taus, 8.0, 4.0, 8.0)
        for tau, value in zip(taus, expected):
            assert viral_concentration(tau, params) == pytest.approx(value)

    def test_negative_after_clearance(self):
        params = TrajectoryParams(p=8.0, d_i2p=4.0, d_p2c=8.0)
        assert viral_concentration(13.0, params) == pytest.approx(-1.0)

    def test_midpoints(self):
        params = TrajectoryParams(p=8.0, d_i2p=4.0, d_p2c=8.0)
        assert viral_concentration(2.0, params) == pytest.approx(4.0)
        assert viral_concentration(8.0, params) == pytest.approx(4.0)


class TestDomain:
    """Parameter and argument validation."""

    def test_negative_tau_rejected(self):
        params = TrajectoryParams(p=8.0, d_i2p=4.0, d_p2c=8.0)
        with pytest.raises(ParameterDomainError):
            viral_concentration(-0.1, params)

    def test_array_extends_rise_below_zero(self):
        value = viral_concentration_array(-2.0, 8.0, 4.0, 8.0)
        assert float(value) == pytest.approx(-4.0)

    @pytest.mark.parametrize("bad", [
        {"p": 0.0, "d_i2p": 1.0, "d_p2c": 1.0},
        {"p": 1.0, "d_i2p": -1.0, "d_p2c": 1.0},
        {"p": 1.0, "d_i2p": 1.0, "d_p2c": math.inf},
    ])
    def test_trajectory_params_must_be_positive(self, bad):
        with pytest.raises(ParameterDomainError):
            TrajectoryParams(**bad)

    def test_hyperparams_reject_nonpositive_scale(self):
        with pytest.raises(ParameterDomainError):
            PopulationHyperparams(2.0, 0.0, 4.0, 4.0, 6.0, 4.0)

    def test_hyperparams_allow_negative_mu(self):
        hyper = PopulationHyperparams(-1.0, 0.5, 4.0, 4.0, 6.0, 4.0)
        assert hyper.mu_p == -1.0

    def test_array_order_follows_names(self, reference_hyper):
        values = reference_hyper.as_array()
        assert list(reference_hyper.to_dict()) == list(HYPER_NAMES)
        assert PopulationHyperparams.from_array(values) == reference_hyper


class TestSampling:
    """Population-level sampling of trajectory triples."""

    def test_samples_are_valid(self, reference_hyper):
        rng = np.random.default_rng(0)
        for _ in range(200):
            params = sample_trajectory(reference_hyper, rng)
            assert params.p > 0 and params.d_i2p > 0 and params.d_p2c > 0

    def test_tiny_shape_does_not_underflow(self):
        hyper = PopulationHyperparams(0.0, 0.1, 1e-3, 1.0, 1e-3, 1.0)
        rng = np.random.default_rng(1)
        for _ in range(100):
            sample_trajectory(hyper, rng)

    def test_tiny_shape_batch_is_clamped(self):
        hyper = PopulationHyperparams(0.0, 0.1, 1e-3, 1.0, 1e-3, 1.0)
        p, d_i2p, d_p2c = sample_trajectories(hyper, 1000, np.random.default_rng(1))
        assert (d_i2p > 0).all() and (d_p2c > 0).all()
        assert np.isfinite(viral_concentration_array(np.zeros(1000), p, d_i2p, d_p2c)).all()

    def test_batch_moments(self, reference_hyper):
        rng = np.random.default_rng(2)
        p, d_i2p, d_p2c = sample_trajectories(reference_hyper, 200_000, rng)
        assert np.median(np.log(p)) == pytest.approx(reference_hyper.mu_p, abs=0.01)
        assert d_i2p.mean() == pytest.approx(4.0, abs=0.02)
        assert d_p2c.mean() == pytest.approx(8.0, abs=0.03)
