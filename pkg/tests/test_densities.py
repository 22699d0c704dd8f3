"""Tests for the densities.py module."""

import numpy as np
import pytest

from rplab.densities import (
    _quadrature_stieltjes,
    expected_stieltjes,
    get_density,
    uniform_density,
)
from rplab.exceptions import ConfigurationError


class TestRegistry:
    def test_default_uniform(self):
        law = get_density("uniform")
        assert law.kind == "uniform"
        assert law.support == (-1.0, 1.0)
        assert law.sup_norm == pytest.approx(0.5)

    def test_parameterized_ids(self):
        assert get_density("uniform:0:2").support == (0.0, 2.0)
        assert get_density("point-mass:0.3").support == (0.3, 0.3)
        gauss = get_density("truncated-gaussian:0.25")
        assert gauss.kind == "truncated-gaussian"
        assert gauss.sup_norm > 1.5

    @pytest.mark.parametrize(
        "density_id", ["cauchy", "uniform:1", "uniform:1:0", "point-mass:a", "truncated-gaussian:-1"]
    )
    def test_invalid_ids(self, density_id):
        with pytest.raises(ConfigurationError):
            get_density(density_id)

    def test_samples_stay_in_support(self, rng):
        for density_id in ("uniform", "uniform:-0.5:2", "truncated-gaussian", "point-mass:1"):
            law = get_density(density_id)
            values = law.sample(rng, 500)
            lo, hi = law.support
            assert values.shape == (500,)
            assert np.all((values >= lo) & (values <= hi))


class TestExpectedStieltjes:
    def test_uniform_closed_form_matches_quadrature(self):
        law = uniform_density(-1.0, 1.0)
        for z in (0.0 + 0.05j, 0.7 + 0.3j, -1.5 + 0.01j, 0.99 + 2.0j):
            assert expected_stieltjes(law, z) == pytest.approx(_quadrature_stieltjes(law, z), abs=1e-8)

    def test_uniform_near_axis_tends_to_density(self):
        # Im E S_0(E + i0) = pi * rho(E)
        value = expected_stieltjes(get_density("uniform"), 0.1 + 1e-9j)
        assert value.imag == pytest.approx(np.pi / 2.0, rel=1e-6)

    def test_point_mass(self):
        z = 0.2 + 0.1j
        assert expected_stieltjes(get_density("point-mass:0.5"), z) == pytest.approx(1.0 / (0.5 - z))

    def test_scalar_and_array_inputs(self):
        law = get_density("truncated-gaussian")
        scalar = expected_stieltjes(law, 0.1 + 0.2j)
        assert isinstance(scalar, complex)
        values = expected_stieltjes(law, np.array([0.1 + 0.2j, -0.3 + 0.5j]))
        assert values.shape == (2,)
        assert values[0] == pytest.approx(scalar)
        assert np.all(values.imag > 0.0)

    def test_rejects_real_axis(self):
        with pytest.raises(AssertionError):
            expected_stieltjes(get_density("uniform"), 0.3 + 0.0j)

    @pytest.mark.parametrize("density_id, z", [("uniform", 0.1 + 0.05j), ("truncated-gaussian", -0.2 + 0.3j)])
    def test_mean_imaginary_part_matches_monte_carlo(self, rng, density_id, z):
        law = get_density(density_id)
        values = (1.0 / (law.sample(rng, 10**6) - z)).imag
        standard_error = values.std() / np.sqrt(values.size)
        assert abs(values.mean() - expected_stieltjes(law, z).imag) <= 3.0 * standard_error
