"""Potentials, the matrix Brownian path and Hamiltonian snapshots.

The perturbation is Phi_t = S * B(t) where B is a symmetric matrix of
standard Brownian motions and S has entries sqrt((1 + delta_xy) / N), so
H_t = diag(V) + Phi_t. The path is never stored: grid increments and bridge
nodes are regenerated from seeded Philox streams on demand.
"""

import threading
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np

from .config import BRIDGE_CACHE_BYTES, DYADIC_LEVELS
from .densities import get_density
from .exceptions import ConfigurationError
from .seeding import PURPOSE_TAGS, stream


@dataclass(frozen=True)
class ModelParams:
    """Matrix size and the exponents fixing T = N^(-1+delta) and eta = N^(-1+alpha)."""

    N: int
    delta: float
    alpha: float
    T: float = field(init=False)
    eta: float = field(init=False)

    def __post_init__(self) -> None:
        problems = []
        if self.N < 2:
            problems.append(f"N must be at least 2, got {self.N}")
        if not 0.0 < self.delta < 1.0:
            problems.append(f"delta must lie in (0, 1), got {self.delta}")
        if not 0.0 < self.alpha < 1.0:
            problems.append(f"alpha must lie in (0, 1), got {self.alpha}")
        if problems:
            raise ConfigurationError(problems)
        object.__setattr__(self, "T", float(self.N) ** (-1.0 + self.delta))
        object.__setattr__(self, "eta", float(self.N) ** (-1.0 + self.alpha))


@dataclass(frozen=True, eq=False)
class Potential:
    """The diagonal of V as a read-only real vector."""

    values: np.ndarray
    provenance: str = "deterministic-list"
    density_id: Optional[str] = None
    seed: Optional[int] = None

    def __post_init__(self) -> None:
        values = np.array(self.values, dtype=float, copy=True)
        assert values.ndim == 1 and values.size >= 1, "Potential needs a non-empty vector."
        assert np.all(np.isfinite(values)), "Potential entries must be finite."
        assert self.provenance in ("deterministic-list", "iid-density"), (
            f"Unknown provenance '{self.provenance}'."
        )
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def N(self) -> int:
        return int(self.values.size)

    @classmethod
    def from_values(cls, values: Sequence[float]) -> "Potential":
        return cls(np.asarray(values, dtype=float))


@dataclass(frozen=True, eq=False)
class HamiltonianSnapshot:
    """H_t = diag(V) + Phi_t, stored symmetric."""

    t: float
    matrix: np.ndarray
    seed: Optional[int] = None
    tick: Optional[int] = None

    def __post_init__(self) -> None:
        assert self.matrix.ndim == 2 and self.matrix.shape[0] == self.matrix.shape[1], (
            "Snapshot matrix must be square."
        )
        self.matrix.setflags(write=False)


def sample_potential(params: ModelParams, density: str = "uniform", seed: int = 0) -> Potential:
    """
    Draws N i.i.d. site energies from a registered density.

    Raises:
        ConfigurationError: If the density id is unknown.
    """
    law = get_density(density)
    values = law.sample(stream(seed, PURPOSE_TAGS["potential"]), params.N)
    lo, hi = law.support
    assert np.all((values >= lo) & (values <= hi)), "Sample left the density support."
    return Potential(values, provenance="iid-density", density_id=density, seed=seed)


def _symmetric_from_upper(upper: np.ndarray, n: int) -> np.ndarray:
    full = np.zeros((n, n))
    full[np.triu_indices(n)] = upper
    # copy strictly-upper entries so (u, v) and (v, u) are the same float
    return full + np.triu(full, 1).T


class DysonPath:
    """Symmetric matrix Brownian motion B on [0, horizon], sampled exactly.

    Grid increments over [t_k, t_k+1] come from one Philox stream per
    interval. Between grid times the path is refined by Levy's midpoint
    construction on a dyadic tick lattice: node (k, offset) draws its
    conditional Gaussian from its own stream, so any set of queried times is
    jointly exact and independent of the query order.
    """

    def __init__(self, N: int, horizon: float, grid_size: int, seed: int) -> None:
        assert N >= 1, "DysonPath needs N >= 1."
        assert grid_size >= 1, "grid_size must be at least 1."
        assert horizon >= 0.0, "horizon must be non-negative."
        self._N = int(N)
        self._horizon = float(horizon)
        self._seed = int(seed)
        self._grid_size = int(grid_size) if horizon > 0.0 else 0
        if self._grid_size:
            grid = np.linspace(0.0, self._horizon, self._grid_size + 1)
        else:
            grid = np.zeros(1)
        grid.setflags(write=False)
        self._time_grid = grid
        self._ticks_per_interval = 2**DYADIC_LEVELS
        self._tick_duration = (
            self._horizon / (self._grid_size * self._ticks_per_interval) if self._grid_size else 0.0
        )
        scale = np.full((self._N, self._N), np.sqrt(1.0 / self._N))
        np.fill_diagonal(scale, np.sqrt(2.0 / self._N))
        scale.setflags(write=False)
        self._scale = scale
        self._cache_entries = max(4, BRIDGE_CACHE_BYTES // (8 * self._N * self._N))
        self._grid_cache: "OrderedDict[int, np.ndarray]" = OrderedDict()
        self._node_cache: "OrderedDict[Tuple[int, int], np.ndarray]" = OrderedDict()
        self._lock = threading.RLock()

    @property
    def N(self) -> int:
        return self._N

    @property
    def horizon(self) -> float:
        return self._horizon

    @property
    def seed(self) -> int:
        return self._seed

    @property
    def grid_size(self) -> int:
        return self._grid_size

    @property
    def time_grid(self) -> np.ndarray:
        return self._time_grid

    @property
    def ticks_per_interval(self) -> int:
        return self._ticks_per_interval

    @property
    def total_ticks(self) -> int:
        return self._grid_size * self._ticks_per_interval

    @property
    def tick_duration(self) -> float:
        return self._tick_duration

    @property
    def scale(self) -> np.ndarray:
        return self._scale

    def tick_time(self, tick: int) -> float:
        assert 0 <= tick <= self.total_ticks, f"tick {tick} outside [0, {self.total_ticks}]."
        if tick % self._ticks_per_interval == 0:
            return float(self._time_grid[tick // self._ticks_per_interval])
        return tick * self._tick_duration

    def increment_upper(self, k: int) -> np.ndarray:
        """Upper-triangular (row-major) Gaussian increments of B over interval k."""
        if not 0 <= k < self._grid_size:
            raise IndexError(f"interval {k} outside [0, {self._grid_size})")
        dt = float(self._time_grid[k + 1] - self._time_grid[k])
        rng = stream(self._seed, PURPOSE_TAGS["path"], k)
        return rng.standard_normal(self._N * (self._N + 1) // 2) * np.sqrt(dt)

    def increment(self, k: int) -> np.ndarray:
        return _symmetric_from_upper(self.increment_upper(k), self._N)

    def brownian_at_grid(self, k: int) -> np.ndarray:
        """Accumulated B(t_k), summed in interval order."""
        if not 0 <= k <= self._grid_size:
            raise IndexError(f"grid index {k} outside [0, {self._grid_size}]")
        with self._lock:
            cached = self._grid_cache.get(k)
            if cached is not None:
                self._grid_cache.move_to_end(k)
                return cached
            start = max((j for j in self._grid_cache if j <= k), default=0)
            value = self._grid_cache[start] if start in self._grid_cache else np.zeros((self._N, self._N))
            for j in range(start, k):
                value = value + self.increment(j)
            value.setflags(write=False)
            self._remember(self._grid_cache, k, value)
            return value

    def brownian_at(self, tick: int) -> np.ndarray:
        """B at the dyadic time tick * tick_duration."""
        if not 0 <= tick <= self.total_ticks:
            raise IndexError(f"tick {tick} outside [0, {self.total_ticks}]")
        k, offset = divmod(tick, self._ticks_per_interval)
        if offset == 0:
            return self.brownian_at_grid(k)
        return self._bridge_node(k, offset)

    def phi_at(self, tick: int) -> np.ndarray:
        return self._scale * self.brownian_at(tick)

    def _bridge_node(self, k: int, offset: int) -> np.ndarray:
        if offset == 0:
            return self.brownian_at_grid(k)
        if offset == self._ticks_per_interval:
            return self.brownian_at_grid(k + 1)
        key = (k, offset)
        with self._lock:
            cached = self._node_cache.get(key)
            if cached is not None:
                self._node_cache.move_to_end(key)
                return cached
            half = offset & -offset
            left = self._bridge_node(k, offset - half)
            right = self._bridge_node(k, offset + half)
            rng = stream(self._seed, PURPOSE_TAGS["bridge"], k, offset)
            noise = rng.standard_normal(self._N * (self._N + 1) // 2)
            spread = np.sqrt(half * self._tick_duration / 2.0)
            value = 0.5 * (left + right) + spread * _symmetric_from_upper(noise, self._N)
            value.setflags(write=False)
            self._remember(self._node_cache, key, value)
            return value

    def _remember(self, cache: "OrderedDict", key: object, value: np.ndarray) -> None:
        cache[key] = value
        cache.move_to_end(key)
        while len(cache) > self._cache_entries:
            cache.popitem(last=False)


def sample_dyson_path(
    params: ModelParams, grid_size: int, seed: int, horizon: Optional[float] = None
) -> DysonPath:
    """Dyson path on [0, T] (or [0, horizon]) with a uniform grid of grid_size steps."""
    assert grid_size >= 1, "grid_size must be at least 1."
    return DysonPath(params.N, params.T if horizon is None else horizon, grid_size, seed)


def assemble_snapshot_at_tick(V: Potential, path: DysonPath, tick: int) -> HamiltonianSnapshot:
    assert V.N == path.N, f"Potential has {V.N} sites but the path has {path.N}."
    matrix = np.array(path.phi_at(tick), copy=True)
    matrix[np.diag_indices(path.N)] += V.values
    return HamiltonianSnapshot(path.tick_time(tick), matrix, seed=path.seed, tick=tick)


def assemble_snapshot(V: Potential, path: DysonPath, k: int) -> HamiltonianSnapshot:
    """
    H at grid time t_k.

    Raises:
        IndexError: If k is outside the time grid.
    """
    if not 0 <= k <= path.grid_size:
        raise IndexError(f"grid index {k} outside [0, {path.grid_size}]")
    return assemble_snapshot_at_tick(V, path, k * path.ticks_per_interval)
