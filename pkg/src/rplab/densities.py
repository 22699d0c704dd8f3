"""Registered single-site densities for random potentials.

A density id is a string: ``uniform`` (on [-1, 1]) or ``uniform:a:b``,
``point-mass`` (at 0) or ``point-mass:c``, ``truncated-gaussian`` (sigma 0.5
on [-1, 1]) or ``truncated-gaussian:sigma``.
"""

from dataclasses import dataclass
from typing import Callable, List, Tuple, Union

import numpy as np
from scipy import integrate, stats

from .config import QUADRATURE_TOLERANCE
from .exceptions import ConfigurationError

Sampler = Callable[[np.random.Generator, int], np.ndarray]


@dataclass(frozen=True)
class Density:
    """A compactly supported single-site law."""

    density_id: str
    kind: str
    support: Tuple[float, float]
    sampler: Sampler
    pdf: Callable[[np.ndarray], np.ndarray]
    sup_norm: float

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        assert size >= 0, "size must be non-negative."
        values = np.asarray(self.sampler(rng, size), dtype=float)
        assert values.shape == (size,), "sampler returned the wrong shape."
        return values


def uniform_density(a: float = -1.0, b: float = 1.0, density_id: str = "") -> Density:
    assert a < b, "uniform density needs a < b."
    width = b - a

    def pdf(v: np.ndarray) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        return np.where((v >= a) & (v <= b), 1.0 / width, 0.0)

    return Density(
        density_id=density_id or f"uniform:{a:g}:{b:g}",
        kind="uniform",
        support=(a, b),
        sampler=lambda rng, n: rng.uniform(a, b, size=n),
        pdf=pdf,
        sup_norm=1.0 / width,
    )


def point_mass_density(c: float = 0.0, density_id: str = "") -> Density:
    return Density(
        density_id=density_id or f"point-mass:{c:g}",
        kind="point-mass",
        support=(c, c),
        sampler=lambda rng, n: np.full(n, c, dtype=float),
        pdf=lambda v: np.zeros_like(np.asarray(v, dtype=float)),
        sup_norm=float("inf"),
    )


def truncated_gaussian_density(
    sigma: float = 0.5, a: float = -1.0, b: float = 1.0, density_id: str = ""
) -> Density:
    assert sigma > 0.0, "sigma must be positive."
    law = stats.truncnorm(a / sigma, b / sigma, loc=0.0, scale=sigma)
    return Density(
        density_id=density_id or f"truncated-gaussian:{sigma:g}",
        kind="truncated-gaussian",
        support=(a, b),
        sampler=lambda rng, n: law.rvs(size=n, random_state=rng),
        pdf=lambda v: law.pdf(np.asarray(v, dtype=float)),
        sup_norm=float(law.pdf(0.0)),
    )


def get_density(density_id: str) -> Density:
    """
    Resolves a density id to a registered density.

    Raises:
        ConfigurationError: If the id is unknown or its parameters are invalid.
    """
    parts = [p.strip() for p in str(density_id).split(":")]
    name, params = parts[0].lower(), parts[1:]
    try:
        numbers = [float(p) for p in params]
    except ValueError:
        raise ConfigurationError([f"density '{density_id}' has non-numeric parameters"])
    if name == "uniform" and len(numbers) in (0, 2):
        a, b = numbers if numbers else (-1.0, 1.0)
        if not a < b:
            raise ConfigurationError([f"density '{density_id}' needs a < b"])
        return uniform_density(a, b, density_id=density_id)
    if name == "point-mass" and len(numbers) in (0, 1):
        return point_mass_density(numbers[0] if numbers else 0.0, density_id=density_id)
    if name == "truncated-gaussian" and len(numbers) in (0, 1):
        sigma = numbers[0] if numbers else 0.5
        if sigma <= 0.0:
            raise ConfigurationError([f"density '{density_id}' needs sigma > 0"])
        return truncated_gaussian_density(sigma, density_id=density_id)
    raise ConfigurationError(
        [
            f"unknown density '{density_id}' (registered: uniform[:a:b], "
            "point-mass[:c], truncated-gaussian[:sigma])"
        ]
    )


def expected_stieltjes(
    density: Density, z: Union[complex, np.ndarray]
) -> Union[complex, np.ndarray]:
    """
    Continuum transform E S_0(z) = integral of rho(v) / (v - z) dv.

    Closed forms are used for the uniform law and point masses; other laws are
    integrated adaptively (absolute and relative tolerance 1e-10).
    """
    zs = np.atleast_1d(np.asarray(z, dtype=complex))
    assert np.all(zs.imag > 0.0), "expected_stieltjes needs Im z > 0."
    a, b = density.support
    if density.kind == "uniform":
        # principal logs: arg(b - z) - arg(a - z) lies in (0, pi) for Im z > 0
        values = (np.log(b - zs) - np.log(a - zs)) / (b - a)
    elif density.kind == "point-mass":
        values = 1.0 / (a - zs)
    else:
        values = np.array([_quadrature_stieltjes(density, complex(w)) for w in zs])
    assert np.all(values.imag > 0.0), "Herglotz property violated for E S_0."
    return values if np.ndim(z) else complex(values[0])


def _quadrature_stieltjes(density: Density, z: complex) -> complex:
    a, b = density.support
    breaks: List[float] = [z.real] if a < z.real < b else []

    def real_part(v: float) -> float:
        return float(density.pdf(np.array(v))) * (v - z.real) / ((v - z.real) ** 2 + z.imag**2)

    def imag_part(v: float) -> float:
        return float(density.pdf(np.array(v))) * z.imag / ((v - z.real) ** 2 + z.imag**2)

    options = dict(epsabs=QUADRATURE_TOLERANCE, epsrel=QUADRATURE_TOLERANCE, limit=400)
    re_val, _ = integrate.quad(real_part, a, b, points=breaks or None, **options)
    im_val, _ = integrate.quad(imag_part, a, b, points=breaks or None, **options)
    return complex(re_val, im_val)
