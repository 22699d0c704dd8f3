"""Regularity of potentials and concentration of their Stieltjes transforms.

Both |S_0| and Im S_0 - E Im S_0 are controlled on regions of the upper
half-plane by probing finitely many points. Probe spacing is tied to the
local derivative bound |S_0'(z)| <= Im S_0(z) / Im z, and sup/inf over a
closed region are read off its boundary (maximum principle for the
harmonic function Im S_0 and the analytic function S_0).
"""

import math
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from .config import (
    CONCENTRATION_POINT_BUDGET,
    K_L_FLOOR,
    K_M_CAP,
    PROBE_TOLERANCE,
)
from .densities import expected_stieltjes, get_density
from .ensemble import ModelParams, Potential, sample_potential
from .exceptions import ConfigurationError
from .logger import get_logger
from .seeding import derive_seed
from .spectral import mean_inverse


@dataclass(frozen=True)
class RegularityVerdict:
    K_m_fit: float
    K_m_cor_fit: float
    K_l_fit: float
    sup_abs_s0: float
    inf_im_s0: float
    passes: Tuple[bool, bool]
    spacing: float
    probe_count: int
    tolerance: float

    def __post_init__(self) -> None:
        assert self.K_m_fit > 0.0, "K_m_fit must be positive."
        assert self.K_l_fit >= 0.0, "K_l_fit must be non-negative."


@dataclass(frozen=True, eq=False)
class ConcentrationEstimate:
    density: str
    N: int
    J: Tuple[float, float]
    zeta: float
    mu_grid: Tuple[float, ...]
    tail_prob: np.ndarray
    ensemble_size: int
    seed: int
    sups: np.ndarray
    lattice: np.ndarray
    reference: np.ndarray
    spacing: float

    def __post_init__(self) -> None:
        assert np.all((self.tail_prob >= 0.0) & (self.tail_prob <= 1.0)), "tail_prob outside [0, 1]."
        order = np.argsort(self.mu_grid)
        assert np.all(np.diff(self.tail_prob[order]) <= 0.0), "tail_prob must be non-increasing in mu."


def sup_abs_stieltjes(V: Potential, eta: float, tolerance: float = PROBE_TOLERANCE) -> Tuple[float, float]:
    """
    Upper bound for sup over Im z >= eta of |S_0(z)|.

    |S_0| is maximal on the line Im z = eta. The line is probed over
    [min V - 1, max V + 1] with spacing tolerance * eta; the probe maximum is
    divided by (1 - tolerance / 2). Off that range |S_0| <= 1.

    Returns:
        Tuple[float, float]: The bound and the probe spacing.
    """
    assert eta > 0.0, "eta must be positive."
    assert 0.0 < tolerance < 1.0, "tolerance must lie in (0, 1)."
    spacing = tolerance * eta
    lo, hi = float(V.values.min()) - 1.0, float(V.values.max()) + 1.0
    count = int(math.ceil((hi - lo) / spacing)) + 1
    probes = np.linspace(lo, hi, count) + 1j * eta
    probe_max = float(np.max(np.abs(mean_inverse(V.values, probes))))
    return max(probe_max / (1.0 - tolerance / 2.0), 1.0), spacing


def _geometric(lo: float, hi: float, ratio: float) -> np.ndarray:
    count = int(math.ceil(math.log(hi / lo) / math.log1p(ratio))) + 1
    return np.geomspace(lo, hi, max(count, 2))


def _linear(lo: float, hi: float, spacing: float) -> np.ndarray:
    count = int(math.ceil((hi - lo) / spacing)) + 1
    return np.linspace(lo, hi, max(count, 2))


def fattened_boundary(
    window: Tuple[float, float], eta: float, epsilon: float, tolerance: float
) -> np.ndarray:
    """Probe points on the boundary of {Im z >= eta, dist(z, W + i[eta, 1]) <= epsilon}."""
    a, b = window
    bottom = _linear(a - epsilon, b + epsilon, tolerance * eta) + 1j * eta
    heights = _geometric(eta, 1.0, tolerance)
    sides = np.concatenate([(a - epsilon) + 1j * heights, (b + epsilon) + 1j * heights])
    top = _linear(a, b, tolerance * (1.0 + epsilon)) + 1j * (1.0 + epsilon)
    angles = _linear(0.0, math.pi / 2.0, tolerance / epsilon)
    arcs = np.concatenate(
        [
            complex(b, 1.0) + epsilon * np.exp(1j * angles),
            complex(a, 1.0) + epsilon * np.exp(1j * (math.pi - angles)),
        ]
    )
    return np.concatenate([bottom, sides, top, arcs])


def verify_assumption(
    V: Potential,
    params: ModelParams,
    W: Tuple[float, float],
    epsilon: float,
    tolerance: float = PROBE_TOLERANCE,
    K_m_cap: float = K_M_CAP,
    K_l_floor: float = K_L_FLOOR,
) -> RegularityVerdict:
    """
    Fits the regularity constants of a potential at scale eta.

    K_m_fit = sup|S_0| / log N and K_l_fit = inf Im S_0 over the
    epsilon-fattened spectral domain, both over probe points with a relative
    Lipschitz slack of `tolerance`. K_m_cor_fit uses the alternative
    normalization 1 + log(1 + eta^-2).
    """
    assert W[0] < W[1], "W must be an increasing interval."
    assert epsilon > 0.0, "epsilon must be positive."
    eta = params.eta
    sup_abs, spacing = sup_abs_stieltjes(V, eta, tolerance)
    probes = fattened_boundary(W, eta, epsilon, tolerance)
    inf_im = float(np.min(mean_inverse(V.values, probes).imag))
    K_m_fit = sup_abs / math.log(params.N)
    K_m_cor_fit = sup_abs / (1.0 + math.log1p(eta**-2))
    K_l_fit = max(inf_im * (1.0 - tolerance), 0.0)
    passes = (K_m_fit <= K_m_cap, K_l_fit >= K_l_floor)
    if not all(passes):
        get_logger().warning(
            f"[regularity N={params.N}] assumption not met: K_m_fit={K_m_fit:.4g} (cap {K_m_cap}), "
            f"K_l_fit={K_l_fit:.4g} (floor {K_l_floor})."
        )
    return RegularityVerdict(
        K_m_fit=K_m_fit,
        K_m_cor_fit=K_m_cor_fit,
        K_l_fit=K_l_fit,
        sup_abs_s0=sup_abs,
        inf_im_s0=inf_im,
        passes=passes,
        spacing=spacing,
        probe_count=int(probes.size),
        tolerance=tolerance,
    )


def concentration_lattice(
    J: Tuple[float, float], zeta: float, mu: float, refine: int = 1
) -> Tuple[np.ndarray, float]:
    """
    Probe points on the boundary of D(J, zeta) = J + i[zeta, 1].

    Spacing is mu * y / 12 at height y (mu * zeta / 12 along the bottom
    edge), divided by `refine`.
    """
    assert J[0] < J[1], "J must be an increasing interval."
    assert 0.0 < zeta < 1.0, "zeta must lie in (0, 1)."
    ratio = mu / (12.0 * refine)
    bottom_spacing = ratio * zeta
    bottom = _linear(J[0], J[1], bottom_spacing) + 1j * zeta
    heights = _geometric(zeta, 1.0, ratio)
    sides = np.concatenate([J[0] + 1j * heights, J[1] + 1j * heights])
    top = _linear(J[0], J[1], ratio) + 1j
    return np.concatenate([bottom, sides, top]), bottom_spacing


def concentration_experiment(
    density: str,
    params: ModelParams,
    J: Tuple[float, float],
    zeta: Optional[float],
    mu_grid: List[float],
    ensemble: int,
    seed: int,
    budget: int = CONCENTRATION_POINT_BUDGET,
    refine: int = 1,
) -> ConcentrationEstimate:
    """
    Empirical tails of sup over D(J, zeta) of |Im S_0 - E Im S_0|.

    E Im S_0 is the continuum transform of the density. One lattice, fine
    enough for the smallest mu, serves every level.

    Raises:
        ConfigurationError: If the lattice exceeds `budget` points or the
            ensemble is smaller than 100.
    """
    if ensemble < 100:
        raise ConfigurationError([f"concentration needs ensemble >= 100, got {ensemble}"])
    assert mu_grid and min(mu_grid) > 0.0, "mu_grid must be non-empty and positive."
    law = get_density(density)
    zeta_value = float(params.N) ** -0.5 if zeta is None else float(zeta)
    lattice, spacing = concentration_lattice(J, zeta_value, min(mu_grid), refine)
    if lattice.size > budget:
        raise ConfigurationError(
            [
                f"concentration lattice needs {lattice.size} points, budget {budget}; "
                "raise the smallest mu or shrink J"
            ]
        )
    log = get_logger()
    log.info(
        f"[concentration N={params.N}] {ensemble} draws of '{density}', zeta={zeta_value:.4g}, "
        f"{lattice.size} boundary probes."
    )
    reference = np.asarray(expected_stieltjes(law, lattice)).imag
    sups = np.empty(ensemble)
    for draw in range(ensemble):
        V = sample_potential(params, density, derive_seed(seed, draw, "potential"))
        sups[draw] = np.max(np.abs(mean_inverse(V.values, lattice).imag - reference))
    mus = tuple(float(mu) for mu in mu_grid)
    tail = np.array([np.mean(sups > mu) for mu in mus])
    return ConcentrationEstimate(
        density=density,
        N=params.N,
        J=(float(J[0]), float(J[1])),
        zeta=zeta_value,
        mu_grid=mus,
        tail_prob=tail,
        ensemble_size=ensemble,
        seed=seed,
        sups=sups,
        lattice=lattice,
        reference=reference,
        spacing=spacing,
    )
