"""Characteristic curves of the local-resolvent advection equation.

A characteristic solves d xi / dt = -S_t(xi), xi_0 = z, and is stopped at
the first time Im xi reaches eta / 2. S_t is evaluated on the dyadic tick
lattice of the Dyson path, so every requested time sees an exact sample of
H_t. Many starting points are integrated together on one shared step
schedule so that each path time costs one eigendecomposition.
"""

import math
import threading
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Protocol, Sequence, Tuple

import numpy as np

from .config import (
    CORRECTION_AUDIT_FRACTION,
    CORRECTION_AUDIT_TOLERANCE,
    DEFAULT_BETA,
    DEFAULT_EVENT_POINTS,
    FIRST_ORDER_WINDOW_FRACTION,
    ODE_MIN_STEP_TICKS,
    ODE_STEPS_PER_HORIZON,
    ODE_TOLERANCE,
    PREIMAGE_MAX_SHOTS,
    PREIMAGE_TOLERANCE,
    SPECTRUM_CACHE_SIZE,
    STOP_TOLERANCE_FRACTION,
)
from .ensemble import DysonPath, ModelParams, Potential, assemble_snapshot_at_tick
from .exceptions import NumericalFailure
from .flow_grid import GridSpec
from .logger import get_logger
from .seeding import PURPOSE_TAGS, stream
from .spectral import (
    UpperHalfPoint,
    eigendecompose,
    local_resolvents,
    mean_inverse,
    stieltjes_potential,
    weighted_inverse,
)


class DriftEvaluator(Protocol):
    """Source of S_t(z) (and optionally G_t(x, z)) on a dyadic tick lattice."""

    @property
    def total_ticks(self) -> int: ...

    @property
    def tick_duration(self) -> float: ...

    @property
    def sites(self) -> Tuple[int, ...]: ...

    def time(self, tick: int) -> float: ...

    def stieltjes(self, tick: int, zs: np.ndarray) -> np.ndarray: ...

    def site_resolvents(self, tick: int, zs: np.ndarray) -> np.ndarray: ...


class PathSpectrum:
    """Eigendecompositions of H_t along one Dyson path, cached by tick.

    Only eigenvalues are computed unless sites are tracked, in which case the
    squared eigenvector entries of the tracked sites are kept as well. The
    cache is guarded by a lock, so evaluators may be shared across threads.

    With first_order=True, S at ticks within total_ticks/256 of a grid time is
    obtained from the grid decomposition plus the first-order eigenvalue
    shifts; a deterministic 1% of those evaluations is audited against an
    exact decomposition and the correction is switched off after a failed
    audit.
    """

    def __init__(
        self,
        path: DysonPath,
        V: Potential,
        sites: Sequence[int] = (),
        first_order: bool = False,
        cache_size: int = SPECTRUM_CACHE_SIZE,
    ) -> None:
        assert V.N == path.N, f"Potential has {V.N} sites but the path has {path.N}."
        assert all(0 <= x < path.N for x in sites), "tracked sites must be valid indices."
        self._path = path
        self._V = V
        self._sites = tuple(int(x) for x in sites)
        self._first_order = first_order
        self._cache_size = cache_size
        self._cache: "OrderedDict[int, Tuple[np.ndarray, Optional[np.ndarray]]]" = OrderedDict()
        self._bases: Dict[int, Tuple[np.ndarray, np.ndarray]] = {}
        self._lock = threading.Lock()
        self.audits = 0
        self.audit_failures = 0

    @property
    def path(self) -> DysonPath:
        return self._path

    @property
    def total_ticks(self) -> int:
        return self._path.total_ticks

    @property
    def tick_duration(self) -> float:
        return self._path.tick_duration

    @property
    def sites(self) -> Tuple[int, ...]:
        return self._sites

    def time(self, tick: int) -> float:
        return self._path.tick_time(tick)

    def _decompose(self, tick: int, vectors: bool) -> Tuple[np.ndarray, Optional[np.ndarray]]:
        snapshot = assemble_snapshot_at_tick(self._V, self._path, tick)
        spec = eigendecompose(snapshot, values_only=not vectors)
        return spec.eigenvalues, spec.eigenvectors

    def entry(self, tick: int) -> Tuple[np.ndarray, Optional[np.ndarray]]:
        """(eigenvalues, tracked-site weights or None) of H at the tick."""
        with self._lock:
            cached = self._cache.get(tick)
            if cached is not None:
                self._cache.move_to_end(tick)
                return cached
        eigenvalues, vectors = self._decompose(tick, vectors=bool(self._sites))
        weights = None
        if vectors is not None:
            rows = vectors[list(self._sites), :]
            weights = rows * rows
        with self._lock:
            self._cache[tick] = (eigenvalues, weights)
            while len(self._cache) > self._cache_size:
                self._cache.popitem(last=False)
        return eigenvalues, weights

    def _nearest_grid_tick(self, tick: int) -> Optional[int]:
        per = self._path.ticks_per_interval
        offset = tick % per
        if offset == 0:
            return None
        window = int(self.total_ticks * FIRST_ORDER_WINDOW_FRACTION)
        nearest = tick - offset if offset <= per - offset else tick - offset + per
        return nearest if abs(tick - nearest) <= window else None

    def _base(self, grid_tick: int) -> Tuple[np.ndarray, np.ndarray]:
        with self._lock:
            base = self._bases.get(grid_tick)
        if base is None:
            eigenvalues, vectors = self._decompose(grid_tick, vectors=True)
            assert vectors is not None, "grid decomposition must include eigenvectors."
            base = (eigenvalues, vectors)
            with self._lock:
                self._bases[grid_tick] = base
        return base

    def _corrected(self, tick: int, grid_tick: int, zs: np.ndarray) -> np.ndarray:
        eigenvalues, vectors = self._base(grid_tick)
        delta = self._path.scale * (self._path.brownian_at(tick) - self._path.brownian_at(grid_tick))
        shifts = np.einsum("ij,ij->j", vectors, delta @ vectors) / self._V.N
        # S(lambda + s) ~ S(lambda) - sum_i s_i / (N (lambda_i - z)^2)
        kernel = 1.0 / (eigenvalues[None, :] - zs[:, None])
        return kernel.mean(axis=1) - (kernel * kernel) @ shifts

    def stieltjes(self, tick: int, zs: np.ndarray) -> np.ndarray:
        grid_tick = self._nearest_grid_tick(tick) if self._first_order else None
        if grid_tick is None:
            values = mean_inverse(self.entry(tick)[0], zs)
        else:
            values = self._corrected(tick, grid_tick, zs)
            if stream(self._path.seed, PURPOSE_TAGS["audit"], tick).random() < CORRECTION_AUDIT_FRACTION:
                values = self._audit(tick, zs, values)
        assert np.all(values.imag > 0.0), f"Herglotz property violated for S_t at tick {tick}."
        return values

    def _audit(self, tick: int, zs: np.ndarray, approx: np.ndarray) -> np.ndarray:
        exact = mean_inverse(self.entry(tick)[0], zs)
        error = float(np.max(np.abs(approx - exact) / np.abs(exact)))
        self.audits += 1
        if error >= CORRECTION_AUDIT_TOLERANCE:
            self.audit_failures += 1
            self._first_order = False
            get_logger().warning(
                f"[seed {self._path.seed}] first-order correction off by {error:.3g} at "
                f"t={self.time(tick):.6g}; using exact decompositions from now on."
            )
        return exact

    def site_resolvents(self, tick: int, zs: np.ndarray) -> np.ndarray:
        assert self._sites, "no sites are tracked by this evaluator."
        eigenvalues, weights = self.entry(tick)
        assert weights is not None, "site weights missing from the cache."
        values = weighted_inverse(weights, eigenvalues, zs)
        assert np.all(values.imag > 0.0), f"Herglotz property violated for G_t at tick {tick}."
        return values


@dataclass(eq=False)
class CharacteristicTrajectory:
    """One stopped characteristic with its diagnostics."""

    z0: UpperHalfPoint
    times: np.ndarray
    xi: np.ndarray
    S_along: np.ndarray
    stopped: bool
    tau_estimate: Optional[float]
    sites: Tuple[int, ...] = ()
    G_along: Optional[np.ndarray] = None
    drift_integral: float = 0.0
    inverse_im_sq_integral: float = 0.0
    schedule: Tuple[int, ...] = field(default=(), repr=False)

    @property
    def samples(self) -> List[Tuple[float, complex]]:
        return [(float(t), complex(x)) for t, x in zip(self.times, self.xi)]

    @property
    def endpoint(self) -> complex:
        return complex(self.xi[-1])

    def drift_identity_defect(self) -> float:
        """Relative gap between the drift integral and 1/Im xi_t - 1/Im z0."""
        exact = 1.0 / self.xi[-1].imag - 1.0 / self.z0.im
        gap = abs(self.drift_integral - exact)
        return gap / abs(exact) if exact != 0.0 else gap


def _initial_step(total_ticks: int) -> int:
    target = max(total_ticks // ODE_STEPS_PER_HORIZON, ODE_MIN_STEP_TICKS)
    return 1 << (target.bit_length() - 1)


def _rk4(ev: DriftEvaluator, tick: int, y: np.ndarray, f0: np.ndarray, dticks: int) -> np.ndarray:
    """One RK4 step over dticks (negative integrates backwards in time)."""
    ht = dticks * ev.tick_duration
    mid = tick + dticks // 2
    k2 = -ev.stieltjes(mid, y + 0.5 * ht * f0)
    k3 = -ev.stieltjes(mid, y + 0.5 * ht * k2)
    k4 = -ev.stieltjes(tick + dticks, y + ht * k3)
    return y + (ht / 6.0) * (f0 + 2.0 * k2 + 2.0 * k3 + k4)


def _two_half_steps(ev: DriftEvaluator, tick: int, y: np.ndarray, f0: np.ndarray, h: int) -> np.ndarray:
    half = h // 2
    y_mid = _rk4(ev, tick, y, f0, half)
    return _rk4(ev, tick + half, y_mid, -ev.stieltjes(tick + half, y_mid), half)


def _hermite(y0: np.ndarray, y1: np.ndarray, d0: np.ndarray, d1: np.ndarray, s: float) -> np.ndarray:
    """Cubic Hermite value at fraction s of a step; d0, d1 are derivatives times step length."""
    s2, s3 = s * s, s * s * s
    return (
        (2 * s3 - 3 * s2 + 1) * y0
        + (s3 - 2 * s2 + s) * d0
        + (-2 * s3 + 3 * s2) * y1
        + (s3 - s2) * d1
    )


class _Recorder:
    """Per-point sample lists and running quadratures."""

    def __init__(self, z0s: np.ndarray, n_sites: int) -> None:
        m = z0s.size
        self.times: List[List[float]] = [[] for _ in range(m)]
        self.xi: List[List[complex]] = [[] for _ in range(m)]
        self.S: List[List[complex]] = [[] for _ in range(m)]
        self.G: List[List[np.ndarray]] = [[] for _ in range(m)]
        self.drift = np.zeros(m)
        self.inverse_sq = np.zeros(m)
        self.tau: List[Optional[float]] = [None] * m
        self.n_sites = n_sites

    def add(self, idx: np.ndarray, t: float, y: np.ndarray, S: np.ndarray, G: Optional[np.ndarray]) -> None:
        for pos, j in enumerate(idx):
            self.times[j].append(t)
            self.xi[j].append(complex(y[pos]))
            self.S[j].append(complex(S[pos]))
            if G is not None:
                self.G[j].append(G[:, pos])

    def simpson(
        self, idx: np.ndarray, length: float, y0: np.ndarray, y_mid: np.ndarray, y1: np.ndarray,
        s0: np.ndarray, s_mid: np.ndarray, s1: np.ndarray,
    ) -> None:
        def weights(y: np.ndarray) -> np.ndarray:
            return 1.0 / y.imag**2

        drift = s0.imag * weights(y0) + 4.0 * s_mid.imag * weights(y_mid) + s1.imag * weights(y1)
        inverse = weights(y0) + 4.0 * weights(y_mid) + weights(y1)
        self.drift[idx] += length / 6.0 * drift
        self.inverse_sq[idx] += length / 6.0 * inverse

    def build(self, z0s: np.ndarray, sites: Tuple[int, ...], schedule: Tuple[int, ...]) -> List[CharacteristicTrajectory]:
        out = []
        for j, z in enumerate(z0s):
            G = np.array(self.G[j]).T if self.n_sites else None
            out.append(
                CharacteristicTrajectory(
                    z0=UpperHalfPoint.from_complex(z),
                    times=np.array(self.times[j]),
                    xi=np.array(self.xi[j], dtype=complex),
                    S_along=np.array(self.S[j], dtype=complex),
                    stopped=self.tau[j] is not None,
                    tau_estimate=self.tau[j],
                    sites=sites,
                    G_along=G,
                    drift_integral=float(self.drift[j]),
                    inverse_im_sq_integral=float(self.inverse_sq[j]),
                    schedule=schedule,
                )
            )
        return out


def integrate_characteristics(
    ev: DriftEvaluator,
    z0s: Sequence[complex],
    eta: float,
    track_sites: bool = False,
    tolerance: float = ODE_TOLERANCE,
) -> List[CharacteristicTrajectory]:
    """
    Integrates stopped characteristics from many starting points at once.

    RK4 with step-doubling error control on power-of-two tick steps, capped
    by total/256 and eta / (4 |S|). Crossings of Im xi = eta/2 are located by
    bisection on the cubic Hermite interpolant of the accepted step.

    Raises:
        NumericalFailure: On step-size underflow; `partial` holds the
            trajectories integrated so far.
    """
    starts = np.asarray(z0s, dtype=complex).ravel()
    assert starts.size >= 1, "at least one starting point is required."
    assert np.all(starts.imag > eta / 2.0), "starting points need Im z0 > eta / 2."
    sites = ev.sites if track_sites else ()
    total, dt = ev.total_ticks, ev.tick_duration
    stop_level, stop_tol = eta / 2.0, STOP_TOLERANCE_FRACTION * eta
    recorder = _Recorder(starts, len(sites))
    y = starts.copy()
    S_now = ev.stieltjes(0, y)
    active = np.ones(starts.size, dtype=bool)
    all_idx = np.arange(starts.size)
    recorder.add(all_idx, ev.time(0), y, S_now, ev.site_resolvents(0, y) if sites else None)
    schedule = [0]
    tick = 0
    h_max = _initial_step(total) if total else 0
    h = h_max
    log = get_logger()

    while tick < total and active.any():
        idx = np.flatnonzero(active)
        ya, fa = y[idx], -S_now[idx]
        cap = eta / (4.0 * float(np.max(np.abs(fa))) * dt)
        while h > ODE_MIN_STEP_TICKS and (h > cap or tick % h):
            h //= 2
        while True:
            if h < ODE_MIN_STEP_TICKS or tick % h:
                partial = recorder.build(starts, sites, tuple(schedule))
                raise NumericalFailure(
                    "characteristic step size underflow",
                    context={"seed": getattr(getattr(ev, "path", None), "seed", None), "t": ev.time(tick), "h_ticks": h},
                    partial=partial,
                )
            full = _rk4(ev, tick, ya, fa, h)
            half = _two_half_steps(ev, tick, ya, fa, h)
            error = float(np.max(np.abs(full - half) / np.abs(half)))
            if error <= tolerance:
                break
            h //= 2
        new_tick = tick + h
        length = h * dt
        S_new = ev.stieltjes(new_tick, half)
        assert np.all(half.imag < ya.imag), "Im xi must decrease along every characteristic."
        crossed = half.imag <= stop_level
        y_mid = 0.5 * (ya + half) + (length / 8.0) * (fa + S_new)
        S_mid = ev.stieltjes(tick + h // 2, y_mid)
        keep = ~crossed
        if keep.any():
            k_idx = idx[keep]
            recorder.simpson(k_idx, length, ya[keep], y_mid[keep], half[keep], -fa[keep], S_mid[keep], S_new[keep])
            G_new = ev.site_resolvents(new_tick, half[keep]) if sites else None
            recorder.add(k_idx, ev.time(new_tick), half[keep], S_new[keep], G_new)
            y[k_idx] = half[keep]
            S_now[k_idx] = S_new[keep]
        for pos in np.flatnonzero(crossed):
            j = idx[pos]
            d0, d1 = length * fa[pos], -length * S_new[pos]
            lo, hi = 0.0, 1.0
            s = 0.5
            for _ in range(80):
                s = 0.5 * (lo + hi)
                gap = _hermite(ya[pos], half[pos], d0, d1, s).imag - stop_level
                if abs(gap) <= stop_tol:
                    break
                lo, hi = (s, hi) if gap > 0.0 else (lo, s)
            xi_tau = complex(_hermite(ya[pos], half[pos], d0, d1, s))
            xi_q = complex(_hermite(ya[pos], half[pos], d0, d1, s / 2.0))
            at_tau = np.array([xi_tau])
            S_tau = ev.stieltjes(new_tick, at_tau)
            S_q = ev.stieltjes(tick + h // 2, np.array([xi_q]))
            recorder.simpson(
                np.array([j]), s * length, ya[pos : pos + 1], np.array([xi_q]), at_tau,
                -fa[pos : pos + 1], S_q, S_tau,
            )
            tau = ev.time(tick) + s * length
            recorder.add(np.array([j]), tau, at_tau, S_tau, ev.site_resolvents(new_tick, at_tau) if sites else None)
            recorder.tau[j] = tau
            y[j] = xi_tau
            active[j] = False
        tick = new_tick
        schedule.append(tick)
        if error < tolerance / 16.0 and h < h_max and tick % (2 * h) == 0:
            h *= 2

    stopped = sum(t is not None for t in recorder.tau)
    log.debug(
        f"Integrated {starts.size} characteristics in {len(schedule) - 1} steps; {stopped} stopped."
    )
    return recorder.build(starts, sites, tuple(schedule))


def integrate_characteristic(
    path: DysonPath,
    V: Potential,
    z0: UpperHalfPoint,
    track_sites: Sequence[int] = (),
    *,
    eta: float,
    spectrum: Optional[PathSpectrum] = None,
) -> CharacteristicTrajectory:
    """Single-point form of integrate_characteristics over a Dyson path."""
    ev = spectrum if spectrum is not None else PathSpectrum(path, V, track_sites)
    assert not track_sites or tuple(track_sites) == ev.sites, "track_sites must match the evaluator's sites."
    return integrate_characteristics(ev, [z0.z], eta, track_sites=bool(track_sites))[0]


def flow_endpoints(ev: DriftEvaluator, ws: Sequence[complex], schedule: Sequence[int]) -> np.ndarray:
    """xi at the last tick of `schedule` for each start, stepping exactly along the schedule."""
    y = np.asarray(ws, dtype=complex).ravel().copy()
    for a, b in zip(schedule, schedule[1:]):
        y = _two_half_steps(ev, a, y, -ev.stieltjes(a, y), b - a)
    return y


def _backward_guess(ev: DriftEvaluator, z: complex) -> complex:
    h = _initial_step(ev.total_ticks)
    y = np.array([z])
    tick = ev.total_ticks
    while tick > 0:
        y = _rk4(ev, tick, y, -ev.stieltjes(tick, y), -h // 2)
        y = _rk4(ev, tick - h // 2, y, -ev.stieltjes(tick - h // 2, y), -h // 2)
        tick -= h
    return complex(y[0])


@dataclass(frozen=True)
class Preimage:
    z: UpperHalfPoint
    w: UpperHalfPoint
    residual: float
    shots: int
    schedule: Tuple[int, ...] = field(repr=False)


def find_preimage(
    path: DysonPath,
    V: Potential,
    z: UpperHalfPoint,
    *,
    eta: float,
    spectrum: Optional[DriftEvaluator] = None,
) -> Preimage:
    """
    Finds w with xi_T(w) = z.

    The time-reversed equation d zeta/ds = S_{T-s}(zeta) is integrated from z
    for a first guess; Newton shooting on the forward flow (with a fixed step
    schedule and a finite-difference complex derivative) then drives
    |xi_T(w) - z| below the preimage tolerance.

    Raises:
        NumericalFailure: If shooting does not converge.
    """
    assert z.im >= eta, "find_preimage needs z in D (Im z >= eta)."
    ev = spectrum if spectrum is not None else PathSpectrum(path, V)
    if ev.total_ticks == 0:
        return Preimage(z, z, 0.0, 0, (0,))
    target = z.z
    w = _backward_guess(ev, target)
    schedule = integrate_characteristics(ev, [w], eta)[0].schedule
    residual = float("inf")
    for shot in range(1, PREIMAGE_MAX_SHOTS + 1):
        probe = 1e-7 * max(1.0, abs(w))
        end, shifted = flow_endpoints(ev, [w, w + probe], schedule)
        residual = abs(end - target)
        if residual <= PREIMAGE_TOLERANCE:
            assert abs(w - target) <= path.horizon / eta + 1e-9, "preimage violates |w - z| <= T / eta."
            return Preimage(z, UpperHalfPoint.from_complex(w), residual, shot, tuple(schedule))
        derivative = (shifted - end) / probe
        w = w - (end - target) / derivative
        if w.imag <= eta / 2.0:
            break
    raise NumericalFailure(
        "preimage shooting did not converge",
        context={"seed": path.seed, "z": target, "residual": residual, "shots": PREIMAGE_MAX_SHOTS},
    )


@dataclass(eq=False)
class FlowEvents:
    A_S_statistic: float
    A_S_threshold: float
    A_G_statistic: float
    A_G_threshold: float
    A_S_occurred: bool
    A_G_occurred: bool
    points_evaluated: int
    domain_points: int
    subsample_seed: int
    inverse_im_sq_max: float
    trajectories: List[CharacteristicTrajectory] = field(default_factory=list, repr=False)

    def __post_init__(self) -> None:
        assert self.A_S_statistic >= 0.0 and self.A_G_statistic >= 0.0, "event statistics must be non-negative."


def track_flow_events(
    path: DysonPath,
    V: Potential,
    grid: GridSpec,
    ell: float,
    sites: Sequence[int],
    *,
    params: ModelParams,
    beta: float = DEFAULT_BETA,
    event_points: int = DEFAULT_EVENT_POINTS,
    subsample_seed: int = 0,
    spectrum: Optional[PathSpectrum] = None,
) -> FlowEvents:
    """
    Evaluates the A_S and A_G statistics along characteristics from D~.

    A random subsample of min(|D~|, event_points) grid points is used, which
    can only under-estimate the suprema. A_G is taken over starting points
    that lie in D.
    """
    assert ell > 0.0, "ell must be positive."
    assert sites, "at least one tracked site is required."
    ev = spectrum if spectrum is not None else PathSpectrum(path, V, sites)
    assert ev.sites == tuple(sites), "spectrum must track the requested sites."
    indices = grid.subsample(event_points, subsample_seed)
    starts = grid.points_at(indices)
    trajectories = integrate_characteristics(ev, starts, params.eta, track_sites=True)
    s0 = np.asarray(stieltjes_potential(V, starts))
    a_s = max(float(np.max(np.abs(tr.S_along - s0[j]))) for j, tr in enumerate(trajectories))
    in_domain = grid.in_domain(starts)
    a_g, inverse_max = 0.0, 0.0
    site_values = V.values[list(sites)]
    for j in np.flatnonzero(in_domain):
        tr = trajectories[j]
        g0 = (1.0 / (site_values - starts[j])).imag
        assert tr.G_along is not None, "site resolvents were not recorded."
        a_g = max(a_g, float(np.max(tr.G_along.imag / g0[:, None])))
        inverse_max = max(inverse_max, tr.inverse_im_sq_integral)
    if not in_domain.any():
        get_logger().warning(f"[seed {path.seed}] no subsampled grid point lies in D; A_G not evaluated.")
    a_s_threshold = 4.0 / (params.N * params.eta) ** beta
    a_g_threshold = float(params.N) ** ell
    return FlowEvents(
        A_S_statistic=a_s,
        A_S_threshold=a_s_threshold,
        A_G_statistic=a_g,
        A_G_threshold=a_g_threshold,
        A_S_occurred=a_s > a_s_threshold,
        A_G_occurred=a_g > a_g_threshold,
        points_evaluated=int(starts.size),
        domain_points=int(in_domain.sum()),
        subsample_seed=subsample_seed,
        inverse_im_sq_max=inverse_max,
        trajectories=trajectories,
    )


@dataclass(frozen=True, eq=False)
class SubordinationResult:
    z: UpperHalfPoint
    w: UpperHalfPoint
    sites: Tuple[int, ...]
    relative_errors: np.ndarray
    G_T: np.ndarray
    G_0: np.ndarray


def subordination_check(
    path: DysonPath,
    V: Potential,
    z: UpperHalfPoint,
    sites: Sequence[int],
    *,
    eta: float,
    spectrum: Optional[PathSpectrum] = None,
) -> SubordinationResult:
    """Relative errors |G_T(x, z) - G_0(x, w)| / |G_0(x, w)| with xi_T(w) = z."""
    assert sites, "at least one site is required."
    pre = find_preimage(path, V, z, eta=eta, spectrum=spectrum)
    final = eigendecompose(assemble_snapshot_at_tick(V, path, path.total_ticks))
    g_T = local_resolvents(final, sites, np.array([z.z]))[:, 0]
    g_0 = 1.0 / (V.values[list(sites)] - pre.w.z)
    errors = np.abs(g_T - g_0) / np.abs(g_0)
    return SubordinationResult(z, pre.w, tuple(int(x) for x in sites), errors, g_T, g_0)


@dataclass(frozen=True)
class ComparisonPoint:
    z: UpperHalfPoint
    exact_preimage: UpperHalfPoint
    lattice_point: UpperHalfPoint
    endpoint_gap: float
    endpoint_ratio: float
    shift_ratio: float
    im_ratio: float


def comparison_point(
    path: DysonPath,
    V: Potential,
    z: UpperHalfPoint,
    grid: GridSpec,
    *,
    K_l: float,
    spectrum: Optional[PathSpectrum] = None,
) -> ComparisonPoint:
    """
    Snaps the exact preimage of z to the grid and measures how far its flow lands.

    Ratios reported: |xi_T(w) - z| / (eta^-2 r), |w - z| / (Upsilon T) and
    Im w / (K_l T / 2) for the lattice point w.
    """
    assert K_l > 0.0, "K_l must be positive."
    ev = spectrum if spectrum is not None else PathSpectrum(path, V)
    pre = find_preimage(path, V, z, eta=grid.eta, spectrum=ev)
    w = complex(grid.nearest(np.array([pre.w.z]))[0])
    endpoint = integrate_characteristics(ev, [w], grid.eta)[0].endpoint
    gap = abs(endpoint - z.z)
    T = path.horizon
    return ComparisonPoint(
        z=z,
        exact_preimage=pre.w,
        lattice_point=UpperHalfPoint.from_complex(w),
        endpoint_gap=gap,
        endpoint_ratio=gap * grid.eta**2 / grid.r,
        shift_ratio=abs(w - z.z) / (grid.upsilon * T) if T > 0 else 0.0,
        im_ratio=w.imag / (0.5 * K_l * T) if T > 0 else math.inf,
    )


def flow_lipschitz_ratio(
    path: DysonPath,
    V: Potential,
    w0: UpperHalfPoint,
    w: UpperHalfPoint,
    *,
    eta: float,
    spectrum: Optional[DriftEvaluator] = None,
) -> float:
    """max_t |xi_t(w0) - xi_t(w)| * eta^2 / |w0 - w| over the common samples."""
    assert w0 != w, "the two starting points must differ."
    ev = spectrum if spectrum is not None else PathSpectrum(path, V)
    first, second = integrate_characteristics(ev, [w0.z, w.z], eta)
    common = min(first.xi.size, second.xi.size)
    spread = float(np.max(np.abs(first.xi[:common] - second.xi[:common])))
    return spread * eta**2 / abs(w0.z - w.z)


def trajectory_frame_rows(run_id: str, trajectories: Sequence[CharacteristicTrajectory]) -> List[Dict[str, Any]]:
    """Rows for the trajectory CSV (one per sample)."""
    rows: List[Dict[str, Any]] = []
    for tr in trajectories:
        last = tr.times.size - 1
        for k, (t, xi, s) in enumerate(zip(tr.times, tr.xi, tr.S_along)):
            rows.append(
                {
                    "run_id": run_id,
                    "z0_re": tr.z0.re,
                    "z0_im": tr.z0.im,
                    "t": float(t),
                    "xi_re": xi.real,
                    "xi_im": xi.imag,
                    "S_re": s.real,
                    "S_im": s.imag,
                    "stopped": bool(tr.stopped and k == last),
                }
            )
    return rows


__all__ = [
    "CharacteristicTrajectory",
    "ComparisonPoint",
    "DriftEvaluator",
    "FlowEvents",
    "PathSpectrum",
    "Preimage",
    "SubordinationResult",
    "comparison_point",
    "find_preimage",
    "flow_endpoints",
    "flow_lipschitz_ratio",
    "integrate_characteristic",
    "integrate_characteristics",
    "track_flow_events",
    "trajectory_frame_rows",
]
