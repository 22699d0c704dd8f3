"""Tests for the spectral.py module."""

import unittest
from unittest.mock import patch

import numpy as np
import pytest
from numpy.linalg import LinAlgError
from scipy import linalg

from rplab.ensemble import (
    HamiltonianSnapshot,
    ModelParams,
    Potential,
    assemble_snapshot,
    sample_dyson_path,
    sample_potential,
)
from rplab.exceptions import NumericalFailure
from rplab.spectral import (
    UpperHalfPoint,
    deformed_semicircle,
    eigendecompose,
    local_resolvent,
    local_resolvents,
    mean_inverse,
    orthonormality_defect,
    residual,
    stieltjes_potential,
    stieltjes_trace,
)


def _random_snapshot(n: int, seed: int) -> HamiltonianSnapshot:
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((n, n)) / np.sqrt(n)
    return HamiltonianSnapshot(0.1, (a + a.T) / 2.0, seed=seed)


class TestEigendecompose:
    def test_accuracy(self):
        snap = _random_snapshot(60, 1)
        spec = eigendecompose(snap)
        assert residual(spec, snap) < 1e-12
        assert orthonormality_defect(spec) < 1e-12
        assert np.all(np.diff(spec.eigenvalues) >= 0.0)

    def test_values_only(self):
        snap = _random_snapshot(30, 2)
        spec = eigendecompose(snap, values_only=True)
        assert spec.eigenvectors is None
        np.testing.assert_allclose(spec.eigenvalues, np.linalg.eigvalsh(snap.matrix), atol=1e-12)
        with pytest.raises(AssertionError):
            spec.weights([0])

    def test_initial_time_spectrum_is_the_potential(self, small_potential, small_path):
        spec = eigendecompose(assemble_snapshot(small_potential, small_path, 0))
        np.testing.assert_allclose(spec.eigenvalues, np.sort(small_potential.values), atol=1e-14)


class TestDriverFallback(unittest.TestCase):
    def test_falls_back_when_first_driver_fails(self):
        real_eigh = linalg.eigh
        used = []

        def flaky(matrix, eigvals_only, driver, check_finite):
            used.append(driver)
            if driver == "evr":
                raise LinAlgError("simulated failure")
            return real_eigh(matrix, eigvals_only=eigvals_only, driver=driver, check_finite=check_finite)

        snap = _random_snapshot(10, 3)
        with patch("rplab.spectral.linalg.eigh", side_effect=flaky):
            spec = eigendecompose(snap)
        self.assertEqual(used, ["evr", "evd"])
        self.assertLess(residual(spec, snap), 1e-12)

    def test_failure_carries_snapshot_context(self):
        snap = _random_snapshot(10, 4)
        with patch("rplab.spectral.linalg.eigh", side_effect=LinAlgError("always")):
            with self.assertRaises(NumericalFailure) as ctx:
                eigendecompose(snap)
        self.assertEqual(ctx.exception.context["seed"], 4)
        self.assertEqual(ctx.exception.context["t"], 0.1)


class TestTransforms:
    def test_upper_half_point(self):
        p = UpperHalfPoint.from_complex(0.5 + 0.25j)
        assert p.z == 0.5 + 0.25j
        with pytest.raises(AssertionError):
            UpperHalfPoint(0.0, 0.0)

    def test_blockwise_kernel_matches_direct_sum(self, rng):
        points = rng.uniform(-1.0, 1.0, 50)
        zs = rng.uniform(-1.0, 1.0, 600) + 1j * rng.uniform(0.01, 1.0, 600)
        direct = np.array([np.mean(1.0 / (points - z)) for z in zs])
        np.testing.assert_allclose(mean_inverse(points, zs), direct, rtol=1e-13)

    def test_scalar_and_array_shapes(self, small_potential):
        z = 0.1 + 0.2j
        scalar = stieltjes_potential(small_potential, z)
        assert isinstance(scalar, complex)
        assert stieltjes_potential(small_potential, UpperHalfPoint.from_complex(z)) == scalar
        arr = stieltjes_potential(small_potential, np.array([z, 0.3 + 1.0j]))
        assert arr.shape == (2,)
        assert arr[0] == scalar
        assert scalar.imag > 0.0

    def test_trace_is_average_of_local_resolvents(self, small_potential, small_path):
        snap = assemble_snapshot(small_potential, small_path, small_path.grid_size)
        spec = eigendecompose(snap)
        zs = np.array([0.0 + 0.05j, 0.4 + 0.3j])
        G = local_resolvents(spec, range(spec.N), zs)
        np.testing.assert_allclose(G.mean(axis=0), stieltjes_trace(spec, zs), rtol=1e-12)

    def test_local_resolvent_at_time_zero(self, small_potential, small_path):
        spec = eigendecompose(assemble_snapshot(small_potential, small_path, 0))
        z = UpperHalfPoint(0.2, 0.1)
        result = local_resolvent(spec, 3, z)
        assert result.site == 3
        assert result.value == pytest.approx(1.0 / (small_potential.values[3] - z.z), rel=1e-12)


class TestDeformedSemicircle:
    def test_zero_time_is_the_potential_transform(self, small_potential):
        z = UpperHalfPoint(0.0, 0.1)
        assert deformed_semicircle(small_potential, 0.0, z) == stieltjes_potential(small_potential, z)

    def test_point_mass_gives_the_semicircle(self):
        V = Potential.from_values(np.zeros(8))
        T = 0.25
        z = UpperHalfPoint(0.3, 0.2)
        m = deformed_semicircle(V, T, z)
        assert m.imag > 0.0
        assert m == pytest.approx(1.0 / (-z.z - T * m), abs=1e-10)
        roots = np.roots([T, z.z, 1.0])
        expected = roots[np.argmax(roots.imag)]
        assert m == pytest.approx(expected, abs=1e-9)

    def test_solves_the_fixed_point_equation(self, small_potential):
        z = UpperHalfPoint(0.1, 0.05)
        m = deformed_semicircle(small_potential, 0.2, z)
        rhs = np.mean(1.0 / (small_potential.values - z.z - 0.2 * m))
        assert m == pytest.approx(rhs, abs=1e-10)

    def test_non_convergence(self, small_potential):
        with pytest.raises(NumericalFailure) as excinfo:
            deformed_semicircle(small_potential, 0.5, UpperHalfPoint(0.0, 0.01), max_iter=2)
        assert excinfo.value.context["iterations"] == 2

    @pytest.mark.slow
    def test_ensemble_mean_follows_the_deformed_law(self):
        params = ModelParams(N=1000, delta=0.5, alpha=0.3)
        V = sample_potential(params, "uniform", seed=61)
        points = [UpperHalfPoint(x, 0.1) for x in (-0.2, 0.0, 0.2)]
        zs = np.array([p.z for p in points])
        traces = []
        for seed in range(20):
            path = sample_dyson_path(params, grid_size=1, seed=1000 + seed)
            final = eigendecompose(assemble_snapshot(V, path, 1), values_only=True)
            traces.append(stieltjes_trace(final, zs))
        mean = np.mean(traces, axis=0)
        expected = np.array([deformed_semicircle(V, params.T, p) for p in points])
        assert np.max(np.abs(mean - expected)) < 0.02


class TestClosedForms:
    def test_diagonal_matrix(self):
        spec = eigendecompose(HamiltonianSnapshot(0.0, np.diag([3.0, 1.0, 2.0])))
        np.testing.assert_allclose(spec.eigenvalues, [1.0, 2.0, 3.0])
        np.testing.assert_allclose(np.abs(spec.eigenvectors), np.eye(3)[:, [1, 2, 0]])

    def test_two_by_two(self):
        spec = eigendecompose(HamiltonianSnapshot(0.0, np.array([[0.0, 1.0], [1.0, 0.0]])))
        np.testing.assert_allclose(spec.eigenvalues, [-1.0, 1.0], atol=1e-15)
        np.testing.assert_allclose(np.abs(spec.eigenvectors), np.full((2, 2), 1.0 / np.sqrt(2.0)))
        value = local_resolvent(spec, 0, UpperHalfPoint(0.0, 1.0)).value
        assert value == pytest.approx(0.5j, abs=1e-15)

    def test_small_potentials(self):
        assert stieltjes_potential(Potential.from_values([0.0]), 1j) == pytest.approx(1j)
        assert stieltjes_potential(Potential.from_values([1.0, -1.0]), 1j) == pytest.approx(0.5j)

    def test_large_uniform_potential(self):
        V = Potential(np.random.default_rng(1).uniform(-1.0, 1.0, 100_000))
        assert stieltjes_potential(V, 1j) == pytest.approx(1j * np.pi / 4.0, abs=0.01)

    def test_semicircle_fixed_point(self):
        m = deformed_semicircle(Potential.from_values([0.0]), 1.0, UpperHalfPoint(0.0, 1.0))
        assert m == pytest.approx(1j * (np.sqrt(5.0) - 1.0) / 2.0, abs=1e-10)

    def test_pure_perturbation_follows_the_semicircle(self):
        from rplab.ensemble import DysonPath

        N = 500
        V = Potential.from_values(np.zeros(N))
        path = DysonPath(N=N, horizon=1.0, grid_size=1, seed=11)
        spec = eigendecompose(assemble_snapshot(V, path, 1), values_only=True)
        assert stieltjes_trace(spec, 1j) == pytest.approx(1j * (np.sqrt(5.0) - 1.0) / 2.0, abs=0.05)


class TestResolventIdentities:
    @pytest.fixture(scope="class")
    def spectrum(self):
        return eigendecompose(_random_snapshot(80, 7))

    def test_spectral_measure_identity(self, spectrum):
        z = np.array([0.2 + 0.05j])
        im_G = local_resolvents(spectrum, range(spectrum.N), z)[:, 0].imag
        assert im_G.sum() == pytest.approx(spectrum.N * stieltjes_trace(spectrum, z)[0].imag, rel=1e-12)

    def test_herglotz_on_random_points(self, spectrum, rng):
        zs = rng.uniform(-3.0, 3.0, 10_000) + 1j * 10.0 ** rng.uniform(-4.0, 1.0, 10_000)
        assert np.all(stieltjes_trace(spectrum, zs).imag > 0.0)
        assert np.all(local_resolvents(spectrum, [0, 40, 79], zs).imag > 0.0)

    def test_resolvent_lipschitz_bound(self, spectrum, rng):
        z = rng.uniform(-2.0, 2.0, 1000) + 1j * 10.0 ** rng.uniform(-3.0, 0.0, 1000)
        zp = rng.uniform(-2.0, 2.0, 1000) + 1j * 10.0 ** rng.uniform(-3.0, 0.0, 1000)
        G = local_resolvents(spectrum, [3], z)[0]
        Gp = local_resolvents(spectrum, [3], zp)[0]
        bound = np.abs(z - zp) / (z.imag * zp.imag)
        assert np.all(np.abs(G - Gp) <= bound * (1.0 + 1e-10))
