"""Eigendecompositions, Stieltjes transforms and local resolvents.

Sites are 0-based indices into the potential. All transforms take points of
the open upper half-plane; scalar inputs return scalars and 1-d arrays of
complex points return arrays.
"""

from dataclasses import dataclass
from typing import Any, Dict, Optional, Sequence, Union

import numpy as np
from scipy import linalg

from .config import FIXED_POINT_DAMPING, FIXED_POINT_MAX_ITER, FIXED_POINT_TOLERANCE
from .decorators import retry_with_drivers
from .ensemble import HamiltonianSnapshot, Potential
from .exceptions import NumericalFailure
from .logger import get_logger

# Rows of the (m, N) kernel 1 / (lambda - z) are built in blocks of this many points.
_BLOCK: int = 256


@dataclass(frozen=True)
class UpperHalfPoint:
    re: float
    im: float

    def __post_init__(self) -> None:
        assert np.isfinite(self.re) and np.isfinite(self.im), "UpperHalfPoint must be finite."
        assert self.im > 0.0, f"UpperHalfPoint needs im > 0, got {self.im}."

    @property
    def z(self) -> complex:
        return complex(self.re, self.im)

    @classmethod
    def from_complex(cls, z: complex) -> "UpperHalfPoint":
        return cls(float(np.real(z)), float(np.imag(z)))


@dataclass(frozen=True)
class ResolventValue:
    z: UpperHalfPoint
    site: int
    value: complex

    def __post_init__(self) -> None:
        assert self.value.imag > 0.0, "Herglotz property violated for G(x, z)."


@dataclass(frozen=True, eq=False)
class SpectralData:
    """Ascending eigenvalues and (optionally) orthonormal eigenvector columns."""

    t: float
    eigenvalues: np.ndarray
    eigenvectors: Optional[np.ndarray] = None

    @property
    def N(self) -> int:
        return int(self.eigenvalues.size)

    def weights(self, sites: Sequence[int]) -> np.ndarray:
        """|psi_i(x)|^2 for the given sites, shape (len(sites), N)."""
        assert self.eigenvectors is not None, "Eigenvectors were not computed for this snapshot."
        rows = self.eigenvectors[np.asarray(sites, dtype=int), :]
        return rows * rows


Point = Union[UpperHalfPoint, complex, np.ndarray]


def _as_complex(z: Point) -> np.ndarray:
    if isinstance(z, UpperHalfPoint):
        return np.array([z.z])
    return np.atleast_1d(np.asarray(z, dtype=complex))


def _shape_like(z: Point, values: np.ndarray) -> Any:
    if isinstance(z, np.ndarray) and z.ndim > 0:
        return values
    return complex(values[0])


def mean_inverse(points: np.ndarray, zs: np.ndarray) -> np.ndarray:
    """(1/N) sum_i 1 / (points_i - z) for every z, computed blockwise."""
    out = np.empty(zs.size, dtype=complex)
    for start in range(0, zs.size, _BLOCK):
        block = zs[start : start + _BLOCK]
        out[start : start + _BLOCK] = (1.0 / (points[None, :] - block[:, None])).mean(axis=1)
    return out


def weighted_inverse(weights: np.ndarray, points: np.ndarray, zs: np.ndarray) -> np.ndarray:
    """sum_i w[x, i] / (points_i - z), shape (n_sites, len(zs))."""
    out = np.empty((weights.shape[0], zs.size), dtype=complex)
    for start in range(0, zs.size, _BLOCK):
        block = zs[start : start + _BLOCK]
        kernel = 1.0 / (points[:, None] - block[None, :])
        out[:, start : start + _BLOCK] = weights @ kernel
    return out


@retry_with_drivers()
def _eigh(matrix: np.ndarray, values_only: bool, driver: str = "evr") -> Any:
    return linalg.eigh(matrix, eigvals_only=values_only, driver=driver, check_finite=True)


def eigendecompose(H: HamiltonianSnapshot, values_only: bool = False) -> SpectralData:
    """
    Dense symmetric eigendecomposition of a snapshot.

    Raises:
        NumericalFailure: If every LAPACK driver fails; the error carries the
            snapshot's seed and time.
    """
    assert np.all(np.isfinite(H.matrix)), "Snapshot has non-finite entries."
    context: Dict[str, Any] = {"seed": H.seed, "t": H.t, "tick": H.tick}
    if values_only:
        eigenvalues = _eigh(H.matrix, True, context=context)
        eigenvectors = None
    else:
        eigenvalues, eigenvectors = _eigh(H.matrix, False, context=context)
        eigenvectors.setflags(write=False)
    eigenvalues = np.asarray(eigenvalues)
    eigenvalues.setflags(write=False)
    assert eigenvalues.size == H.matrix.shape[0], "Eigensolver returned the wrong count."
    return SpectralData(H.t, eigenvalues, eigenvectors)


def residual(spec: SpectralData, H: HamiltonianSnapshot) -> float:
    """max_i ||H psi_i - lambda_i psi_i||_2 relative to ||H||_2."""
    assert spec.eigenvectors is not None, "residual needs eigenvectors."
    diff = H.matrix @ spec.eigenvectors - spec.eigenvectors * spec.eigenvalues[None, :]
    scale = max(float(np.max(np.abs(spec.eigenvalues))), np.finfo(float).tiny)
    return float(np.max(np.linalg.norm(diff, axis=0)) / scale)


def orthonormality_defect(spec: SpectralData) -> float:
    assert spec.eigenvectors is not None, "orthonormality_defect needs eigenvectors."
    gram = spec.eigenvectors.T @ spec.eigenvectors
    return float(np.max(np.abs(gram - np.eye(spec.N))))


def stieltjes_potential(V: Potential, z: Point) -> Any:
    """S_0(z) = (1/N) sum_x 1 / (V_x - z)."""
    zs = _as_complex(z)
    assert np.all(zs.imag > 0.0), "stieltjes_potential needs Im z > 0."
    values = mean_inverse(V.values, zs)
    assert np.all(values.imag > 0.0), "Herglotz property violated for S_0."
    return _shape_like(z, values)


def stieltjes_trace(spec: SpectralData, z: Point) -> Any:
    """S_t(z) = (1/N) sum_i 1 / (lambda_i - z)."""
    zs = _as_complex(z)
    assert np.all(zs.imag > 0.0), "stieltjes_trace needs Im z > 0."
    values = mean_inverse(spec.eigenvalues, zs)
    assert np.all(values.imag > 0.0), "Herglotz property violated for S_t."
    return _shape_like(z, values)


def local_resolvents(spec: SpectralData, sites: Sequence[int], zs: np.ndarray) -> np.ndarray:
    """G(x, z) = sum_i |psi_i(x)|^2 / (lambda_i - z) for all sites and points."""
    zs = _as_complex(zs)
    assert np.all(zs.imag > 0.0), "local_resolvents needs Im z > 0."
    values = weighted_inverse(spec.weights(sites), spec.eigenvalues, zs)
    assert np.all(values.imag > 0.0), "Herglotz property violated for G(x, z)."
    return values


def local_resolvent(spec: SpectralData, x: int, z: UpperHalfPoint) -> ResolventValue:
    assert 0 <= x < spec.N, f"site {x} outside [0, {spec.N})."
    value = local_resolvents(spec, [x], np.array([z.z]))[0, 0]
    return ResolventValue(z, int(x), complex(value))


def deformed_semicircle(
    V: Potential,
    Tval: float,
    z: UpperHalfPoint,
    damping: float = FIXED_POINT_DAMPING,
    tol: float = FIXED_POINT_TOLERANCE,
    max_iter: int = FIXED_POINT_MAX_ITER,
) -> complex:
    """
    Herglotz solution m of m = (1/N) sum_x 1 / (V_x - z - T m).

    Damped fixed-point iteration started at S_0(z).

    Raises:
        NumericalFailure: If the iteration does not converge in max_iter steps.
    """
    assert Tval >= 0.0, "Tval must be non-negative."
    assert 0.0 < damping <= 1.0, "damping must lie in (0, 1]."
    m = complex(stieltjes_potential(V, z))
    if Tval == 0.0:
        return m
    w = z.z
    for iteration in range(1, max_iter + 1):
        update = complex(np.mean(1.0 / (V.values - w - Tval * m)))
        step = damping * (update - m)
        m = m + step
        if abs(step) <= tol * damping:
            assert m.imag > 0.0, "Herglotz property violated for the deformed semicircle."
            get_logger().debug(f"Deformed semicircle converged at z={w} in {iteration} iterations.")
            return m
    raise NumericalFailure(
        "deformed semicircle fixed point did not converge",
        context={"z": w, "T": Tval, "damping": damping, "iterations": max_iter, "last_step": abs(step)},
    )
