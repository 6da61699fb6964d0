"""Tests for delay distributions and the pathogen delay presets."""

import math

import numpy as np
import pytest

from error_handler import ParameterDomainError
from modules.distributions import DelayDistribution
from modules.outbreak import PATHOGEN_PRESETS


class TestPresetMoments:
    """Sample moments of the generation-time and incubation presets."""

    N = 1_000_000

    def test_sars2_generation_time(self):
        rng = np.random.default_rng(100)
        samples = PATHOGEN_PRESETS["sars-cov-2"].generation_time.sample(rng, size=self.N)
        assert samples.mean() == pytest.approx(3.98, abs=0.05)
        assert samples.var() == pytest.approx(8.74, abs=0.3)

    def test_sars2_incubation(self):
        rng = np.random.default_rng(101)
        samples = PATHOGEN_PRESETS["sars-cov-2"].incubation.sample(rng, size=self.N)
        assert samples.mean() == pytest.approx(5.53, abs=0.05)

    def test_flu_generation_time(self):
        rng = np.random.default_rng(102)
        samples = PATHOGEN_PRESETS["influenza-a"].generation_time.sample(rng, size=self.N)
        assert samples.mean() == pytest.approx(2.67, abs=0.05)

    def test_influenza_b_reuses_a(self):
        a, b = PATHOGEN_PRESETS["influenza-a"], PATHOGEN_PRESETS["influenza-b"]
        assert a.generation_time == b.generation_time
        assert a.incubation == b.incubation


class TestAnalyticMoments:

    def test_gamma_mean_and_variance(self):
        dist = DelayDistribution.gamma(1.81, 0.455)
        assert dist.mean == pytest.approx(1.81 / 0.455)
        assert dist.variance == pytest.approx(1.81 / 0.455 ** 2)

    def test_flu_incubation_lognormal_mean(self):
        # 分布参数给出的均值约 1.52 天
        dist = PATHOGEN_PRESETS["influenza-a"].incubation
        assert dist.mean == pytest.approx(math.exp(0.336 + 0.412 ** 2 / 2))
        assert dist.mean == pytest.approx(1.52, abs=0.01)


@pytest.mark.parametrize("dist", [
    DelayDistribution.gamma(4.0, 4.0),
    DelayDistribution.lognormal(math.log(9.0), 0.5),
], ids=["gamma", "lognormal"])
def test_sample_moments_within_five_standard_errors(dist):
    n = 1_000_000
    samples = dist.sample(np.random.default_rng(7), size=n)
    centred = samples - samples.mean()
    var = samples.var()
    mean_se = math.sqrt(dist.variance / n)
    var_se = math.sqrt((np.mean(centred ** 4) - var ** 2) / n)
    assert abs(samples.mean() - dist.mean) < 5 * mean_se
    assert abs(var - dist.variance) < 5 * var_se


class TestValidation:

    def test_unknown_family(self):
        with pytest.raises(ParameterDomainError):
            DelayDistribution("weibull", 1.0, 1.0)

    @pytest.mark.parametrize("a,b", [(0.0, 1.0), (1.0, 0.0), (-1.0, 1.0)])
    def test_gamma_parameters_positive(self, a, b):
        with pytest.raises(ParameterDomainError):
            DelayDistribution.gamma(a, b)

    def test_lognormal_allows_negative_logmean(self):
        assert DelayDistribution.lognormal(-0.5, 0.3).mean > 0

    def test_from_dict(self):
        dist = DelayDistribution.from_dict({"family": "gamma", "shape": 5.81, "rate": 1.05})
        assert dist == PATHOGEN_PRESETS["sars-cov-2"].incubation
        assert dist.to_dict() == {"family": "gamma", "shape": 5.81, "rate": 1.05}

    def test_logpdf_outside_support(self):
        dist = DelayDistribution.gamma(2.0, 1.0)
        assert dist.logpdf(-1.0) == -np.inf
        assert np.isfinite(dist.logpdf(1.0))
