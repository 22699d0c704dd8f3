"""Eigenfunction localization statistics and their scaling with N."""

import math
from dataclasses import dataclass
from typing import Callable, Dict, Final, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import stats

from .config import BULK_FRACTION, ExperimentConfig
from .ensemble import Potential
from .exceptions import ConfigurationError
from .logger import get_logger
from .spectral import SpectralData, stieltjes_potential

LOCALIZATION_COLUMNS: Final[Tuple[str, ...]] = (
    "run_id", "N", "delta", "kappa", "theta", "lambda", "X_size", "mass_outside", "sup_norm_sq", "ipr",
)
CHECK_COLUMNS: Final[Tuple[str, ...]] = (
    "run_id", "N", "lambda", "X_size", "X_size_bound", "mass_outside", "route_bound", "sup_bound_ok",
)
SCALING_QUANTITIES: Final[Tuple[str, ...]] = ("ipr", "sup_norm_sq", "mass_outside")

_ROUNDING: Final[float] = 1e-12


@dataclass(frozen=True)
class LocalizationReport:
    lam: float
    X_size: int
    mass_outside: float
    mass_inside: float
    sup_norm_sq: float
    ipr: float
    kappa: float
    theta: float
    gamma: float
    X_size_bound: float
    route_bound: float
    N: int

    def __post_init__(self) -> None:
        assert -_ROUNDING <= self.mass_outside <= 1.0 + _ROUNDING, "mass_outside outside [0, 1]."
        assert abs(self.mass_outside + self.mass_inside - 1.0) <= 1e-10, "masses must add up to one."
        assert 1.0 / self.N - _ROUNDING <= self.ipr <= self.sup_norm_sq + _ROUNDING, (
            "ipr must lie in [1/N, sup_norm_sq]."
        )
        assert self.sup_norm_sq <= 1.0 + _ROUNDING, "sup_norm_sq must not exceed one."

    @property
    def sup_bound_ok(self) -> bool:
        """sup_norm_sq <= N^-theta."""
        return self.sup_norm_sq <= float(self.N) ** (-self.theta)


def _radius(kappa: float, N: int) -> float:
    return float(N) ** (-1.0 + kappa)


def support_set(V: Potential, lam: float, kappa: float, N: Optional[int] = None) -> np.ndarray:
    """Sorted sites x with |lam - V_x| <= N^(-1+kappa); N defaults to the size of V."""
    assert 0.0 < kappa <= 1.0, "kappa must lie in (0, 1]."
    size = V.N if N is None else N
    assert size >= 1, "N must be positive."
    return np.flatnonzero(np.abs(lam - V.values) <= _radius(kappa, size))


def support_size_bound(V: Potential, lam: float, kappa: float) -> float:
    """2 N r Im S_0(lam + i r) with r = N^(-1+kappa); bounds |X_lam|."""
    r = _radius(kappa, V.N)
    return 2.0 * V.N * r * complex(stieltjes_potential(V, complex(lam, r))).imag


def spectral_route_bound(spec: SpectralData, V: Potential, lam: float, kappa: float, eta: float) -> float:
    """eta * sum over x outside X_lam of Im G_T(x, lam + i eta); bounds mass_outside."""
    assert spec.eigenvectors is not None, "spectral_route_bound needs eigenvectors."
    outside = np.ones(V.N, dtype=bool)
    outside[support_set(V, lam, kappa)] = False
    column_mass = np.sum(spec.eigenvectors[outside, :] ** 2, axis=0)
    kernel = eta**2 / ((spec.eigenvalues - lam) ** 2 + eta**2)
    return float(column_mass @ kernel)


def localization_report(
    spec: SpectralData,
    V: Potential,
    window: Tuple[float, float],
    exponents: Tuple[float, float, float],
    bulk_fraction: float = BULK_FRACTION,
    eta: Optional[float] = None,
) -> List[LocalizationReport]:
    """
    One report per eigenvalue in the central bulk_fraction of the window.

    Args:
        spec: Eigendecomposition of H_T (eigenvectors required).
        V: The potential H_T was built from.
        window: The energy window W.
        exponents: (kappa, theta, gamma).
        bulk_fraction: Share of W (centred) whose eigenvalues are reported.
        eta: Spectral scale for the spectral-measure route bound; NaN when None.

    Returns:
        A list of reports, empty (with a logged warning) when no eigenvalue
        lies in the bulk of W.
    """
    assert spec.eigenvectors is not None, "localization_report needs eigenvectors."
    assert window[0] < window[1], "window must be an increasing interval."
    kappa, theta, gamma = exponents
    centre, half = 0.5 * (window[0] + window[1]), 0.5 * bulk_fraction * (window[1] - window[0])
    chosen = np.flatnonzero(np.abs(spec.eigenvalues - centre) <= half)
    if chosen.size == 0:
        get_logger().warning(
            f"No eigenvalue of H at t={spec.t:.6g} lies in [{centre - half:.6g}, {centre + half:.6g}]."
        )
        return []
    reports = []
    for i in chosen:
        lam = float(spec.eigenvalues[i])
        weights = spec.eigenvectors[:, i] ** 2
        assert abs(weights.sum() - 1.0) <= 1e-12 * V.N, "eigenvector is not normalized."
        inside = np.zeros(V.N, dtype=bool)
        inside[support_set(V, lam, kappa)] = True
        reports.append(
            LocalizationReport(
                lam=lam,
                X_size=int(inside.sum()),
                mass_outside=float(weights[~inside].sum()),
                mass_inside=float(weights[inside].sum()),
                sup_norm_sq=float(weights.max()),
                ipr=float(np.sum(weights * weights)),
                kappa=kappa,
                theta=theta,
                gamma=gamma,
                X_size_bound=support_size_bound(V, lam, kappa),
                route_bound=spectral_route_bound(spec, V, lam, kappa, eta) if eta else math.nan,
                N=V.N,
            )
        )
    return reports


def reports_frame(run_id: str, delta: float, reports: Sequence[LocalizationReport]) -> pd.DataFrame:
    """Localization rows with the columns of LOCALIZATION_COLUMNS plus the check columns."""
    rows = [
        {
            "run_id": run_id,
            "N": r.N,
            "delta": delta,
            "kappa": r.kappa,
            "theta": r.theta,
            "lambda": r.lam,
            "X_size": r.X_size,
            "mass_outside": r.mass_outside,
            "sup_norm_sq": r.sup_norm_sq,
            "ipr": r.ipr,
            "X_size_bound": r.X_size_bound,
            "route_bound": r.route_bound,
            "sup_bound_ok": r.sup_bound_ok,
        }
        for r in reports
    ]
    columns = list(dict.fromkeys(LOCALIZATION_COLUMNS + CHECK_COLUMNS))
    return pd.DataFrame(rows, columns=columns)


@dataclass(frozen=True, eq=False)
class ScalingTable:
    per_n: pd.DataFrame
    slopes: pd.DataFrame

    def slope(self, quantity: str) -> float:
        row = self.slopes.loc[self.slopes["quantity"] == quantity]
        assert len(row) == 1, f"no slope fitted for '{quantity}'."
        return float(row["slope"].iloc[0])


def fit_scaling(frame: pd.DataFrame) -> ScalingTable:
    """
    Per-N medians and log-log slopes against N.

    Raises:
        ConfigurationError: If fewer than 3 distinct N are present.
    """
    n_values = sorted(frame["N"].unique())
    if len(n_values) < 3:
        raise ConfigurationError([f"scaling fit needs at least 3 distinct N, got {list(n_values)}"])
    grouped = frame.groupby("N")
    per_n = pd.DataFrame(
        {
            "N": n_values,
            "median_ipr": grouped["ipr"].median().reindex(n_values).to_numpy(),
            "median_sup_norm_sq": grouped["sup_norm_sq"].median().reindex(n_values).to_numpy(),
            "median_mass_outside": grouped["mass_outside"].median().reindex(n_values).to_numpy(),
            "count": grouped.size().reindex(n_values).to_numpy(),
        }
    )
    rows: List[Dict[str, float]] = []
    log_n = np.log(per_n["N"].to_numpy(dtype=float))
    for quantity in SCALING_QUANTITIES:
        medians = per_n[f"median_{quantity}"].to_numpy(dtype=float)
        if np.all(medians > 0.0):
            fit = stats.linregress(log_n, np.log(medians))
            rows.append(
                {
                    "quantity": quantity,
                    "slope": float(fit.slope),
                    "intercept": float(fit.intercept),
                    "stderr": float(fit.stderr),
                    "rvalue": float(fit.rvalue),
                    "n_points": len(n_values),
                }
            )
        else:
            get_logger().warning(f"Median {quantity} vanishes for some N; slope not fitted.")
            rows.append(
                {"quantity": quantity, "slope": math.nan, "intercept": math.nan, "stderr": math.nan,
                 "rvalue": math.nan, "n_points": len(n_values)}
            )
    return ScalingTable(per_n=per_n, slopes=pd.DataFrame(rows))


_IGNORED_IN_SWEEP: Final[Tuple[str, ...]] = ("N", "sweep_N", "output_dir", "threads")


def scaling_sweep(
    configs: Sequence[ExperimentConfig],
    realize: Optional[Callable[[ExperimentConfig, int], pd.DataFrame]] = None,
) -> ScalingTable:
    """
    Runs every realization of every config and fits the scaling table.

    Args:
        configs: Configs that differ only in N.
        realize: Returns the localization rows of one (config, index); the index
            counts realizations across the whole sweep in the order of `configs`,
            as the harness numbers scaling-sweep tasks. Defaults to the harness
            realization.

    Raises:
        ConfigurationError: If fewer than 3 distinct N are given or the
            configs differ in anything but N.
    """
    distinct = sorted({c.N for c in configs})
    if len(distinct) < 3:
        raise ConfigurationError([f"scaling sweep needs at least 3 distinct N, got {distinct}"])
    reference = {k: v for k, v in configs[0].to_dict().items() if k not in _IGNORED_IN_SWEEP}
    for cfg in configs[1:]:
        other = {k: v for k, v in cfg.to_dict().items() if k not in _IGNORED_IN_SWEEP}
        differing = sorted(k for k in reference if reference[k] != other[k])
        if differing:
            raise ConfigurationError([f"scaling sweep configs differ in {differing}, not only in N"])
    if realize is None:
        from .harness import localization_frame

        realize = localization_frame
    frames = []
    for cfg in configs:
        for _ in range(cfg.ensemble):
            # sweep-wide position, the same task index the harness seeds by
            frames.append(realize(cfg, len(frames)))
    frame = pd.concat(frames, ignore_index=True)
    get_logger().info(f"Scaling sweep over N={distinct} with {len(frame)} eigenvectors.")
    return fit_scaling(frame)
