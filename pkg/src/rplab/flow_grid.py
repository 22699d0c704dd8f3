"""The comparison grid D~ and its mesh radius r.

D~ is an implicit square lattice: cells of side r*sqrt(2) tile the box
[W_lo - T/eta, W_hi + T/eta] x [eta, 1 + T/eta], which contains the covered
region {Im z > eta, dist(z, D) <= T/eta}, and the grid points are the cell
centres. Every point of the box is therefore within r of D~. Points are
addressed by a flat int64 index and only materialized on request.
"""

import math
from dataclasses import dataclass
from typing import Final, Tuple

import numpy as np

from .config import DEFAULT_GRID_BUDGET, DEFAULT_WINDOW, PROBE_TOLERANCE
from .ensemble import ModelParams, Potential
from .exceptions import ConfigurationError
from .logger import get_logger
from .regularity import sup_abs_stieltjes
from .seeding import PURPOSE_TAGS, stream

# Largest lattice that points() will materialize.
MATERIALIZE_LIMIT: Final[int] = 10**7


@dataclass(frozen=True)
class GridSpec:
    r: float
    upsilon: float
    eta: float
    horizon: float
    window: Tuple[float, float]
    re_origin: float
    im_origin: float
    spacing: float
    nx: int
    ny: int
    probe_spacing: float

    @property
    def cardinality(self) -> int:
        return self.nx * self.ny

    @property
    def covering_constant(self) -> float:
        """C in |D~| <= C (eta r)^-2 for this construction."""
        return self.cardinality * (self.eta * self.r) ** 2

    @property
    def re_range(self) -> Tuple[float, float]:
        return (self.re_origin, self.re_origin + self.nx * self.spacing)

    @property
    def im_range(self) -> Tuple[float, float]:
        return (self.im_origin, self.im_origin + self.ny * self.spacing)

    @property
    def covered_region(self) -> str:
        reach = self.horizon / self.eta
        return (
            f"{{Im z > {self.eta:.6g}, dist(z, D) <= {reach:.6g}}} inside "
            f"[{self.re_range[0]:.6g}, {self.re_range[1]:.6g}] x "
            f"[{self.im_range[0]:.6g}, {self.im_range[1]:.6g}]"
        )

    def points_at(self, indices: np.ndarray) -> np.ndarray:
        idx = np.asarray(indices, dtype=np.int64)
        assert np.all((idx >= 0) & (idx < self.cardinality)), "grid index out of range."
        ix, iy = np.divmod(idx, self.ny)
        return (self.re_origin + (ix + 0.5) * self.spacing) + 1j * (
            self.im_origin + (iy + 0.5) * self.spacing
        )

    def points(self) -> np.ndarray:
        if self.cardinality > MATERIALIZE_LIMIT:
            raise ConfigurationError(
                [f"grid has {self.cardinality} points; materializing more than {MATERIALIZE_LIMIT} is refused"]
            )
        return self.points_at(np.arange(self.cardinality, dtype=np.int64))

    def nearest(self, zs: np.ndarray) -> np.ndarray:
        """Closest grid point to each z (clamped into the lattice)."""
        zs = np.atleast_1d(np.asarray(zs, dtype=complex))
        ix = np.clip(np.floor((zs.real - self.re_origin) / self.spacing), 0, self.nx - 1)
        iy = np.clip(np.floor((zs.imag - self.im_origin) / self.spacing), 0, self.ny - 1)
        return self.points_at(ix.astype(np.int64) * self.ny + iy.astype(np.int64))

    def in_domain(self, zs: np.ndarray) -> np.ndarray:
        """Mask of points lying in D = W + i[eta, 1]."""
        zs = np.asarray(zs, dtype=complex)
        lo, hi = self.window
        return (zs.real >= lo) & (zs.real <= hi) & (zs.imag >= self.eta) & (zs.imag <= 1.0)

    def subsample(self, count: int, seed: int) -> np.ndarray:
        """Sorted indices of min(count, |D~|) distinct grid points drawn uniformly."""
        assert count >= 1, "count must be at least 1."
        if self.cardinality <= count:
            return np.arange(self.cardinality, dtype=np.int64)
        rng = stream(seed, PURPOSE_TAGS["grid-subsample"])
        chosen: dict = {}
        while len(chosen) < count:
            for value in rng.integers(0, self.cardinality, size=count, dtype=np.int64):
                chosen.setdefault(int(value), None)
                if len(chosen) == count:
                    break
        return np.sort(np.fromiter(chosen, dtype=np.int64, count=count))


def mesh_radius(params: ModelParams, upsilon: float, theta: float, gamma: float) -> float:
    """r = min(Upsilon T eta^2, N^-2theta eta^3, N^-(1+2gamma) eta^3)."""
    N, T, eta = float(params.N), params.T, params.eta
    return min(upsilon * T * eta**2, N ** (-2.0 * theta) * eta**3, N ** (-(1.0 + 2.0 * gamma)) * eta**3)


def upsilon(V: Potential, params: ModelParams, tolerance: float = PROBE_TOLERANCE) -> Tuple[float, float]:
    """Upsilon = sup_{Im z > eta} |S_0(z)| + 4 / sqrt(N eta), with the probe spacing used."""
    sup_abs, spacing = sup_abs_stieltjes(V, params.eta, tolerance)
    return sup_abs + 4.0 / math.sqrt(params.N * params.eta), spacing


def build_grid(
    params: ModelParams,
    V: Potential,
    theta: float,
    gamma: float,
    window: Tuple[float, float] = DEFAULT_WINDOW,
    budget: int = DEFAULT_GRID_BUDGET,
    tolerance: float = PROBE_TOLERANCE,
) -> GridSpec:
    """
    Builds D~ for one potential.

    Raises:
        ConfigurationError: If the lattice would exceed `budget` points.
    """
    assert 0.0 < theta < 1.0 and 0.0 < gamma < 1.0, "theta and gamma must lie in (0, 1)."
    assert window[0] < window[1], "window must be an increasing interval."
    ups, probe_spacing = upsilon(V, params, tolerance)
    r = mesh_radius(params, ups, theta, gamma)
    spacing = r * math.sqrt(2.0)
    reach = params.T / params.eta
    re_lo, re_hi = window[0] - reach, window[1] + reach
    im_lo, im_hi = params.eta, 1.0 + reach
    nx = int(math.ceil((re_hi - re_lo) / spacing))
    ny = int(math.ceil((im_hi - im_lo) / spacing))
    if nx * ny > budget:
        raise ConfigurationError(
            [
                f"grid D~ needs {nx * ny} points (r={r:.3g}), budget {budget}; "
                "raise alpha or shrink the window"
            ]
        )
    grid = GridSpec(
        r=r,
        upsilon=ups,
        eta=params.eta,
        horizon=params.T,
        window=(float(window[0]), float(window[1])),
        re_origin=re_lo,
        im_origin=im_lo,
        spacing=spacing,
        nx=nx,
        ny=ny,
        probe_spacing=probe_spacing,
    )
    get_logger().debug(
        f"[grid N={params.N}] r={r:.6g}, Upsilon={ups:.6g}, |D~|={grid.cardinality}, "
        f"covering constant {grid.covering_constant:.4g}."
    )
    return grid
