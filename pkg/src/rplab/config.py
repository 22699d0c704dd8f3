"""Configuration for the Rosenzweig-Porter characteristics laboratory.

This module holds the static defaults of the laboratory (logging, output
locations, exponent defaults and numerical constants) and the typed
``ExperimentConfig`` that ties every model exponent to a run.

Two environment variables may be set, directly or through a ``.env`` file in
the project root which is loaded automatically by python-dotenv:
- RPLAB_LOG_LEVEL: logging level for the CLI (default INFO).
- RPLAB_OUTPUT_DIR: base directory for run outputs and logs (default ./runs).

Experiment files are flat ``KEY=VALUE`` files (comments with ``#``) parsed by
``dotenv_values``; keys are case-insensitive. See configs/ for examples.
"""

import hashlib
import json
import math
import os
from dataclasses import asdict, dataclass, fields, replace
from typing import Any, Dict, Final, List, Mapping, Optional, Tuple

from dotenv import dotenv_values, load_dotenv

from .exceptions import ConfigurationError

# Load environment variables from .env file if it exists
load_dotenv()

# --- General Settings ---
LOG_LEVEL: Final[str] = os.getenv("RPLAB_LOG_LEVEL", "INFO").upper()
LOG_FILE: Final[str] = "rplab.log"

# Absolute project root so relative output paths do not depend on the CWD.
PROJECT_ROOT: Final[str] = os.path.dirname(
    os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
)
OUTPUT_ROOT: Final[str] = os.getenv(
    "RPLAB_OUTPUT_DIR", os.path.join(PROJECT_ROOT, "runs")
)

assert LOG_LEVEL in {"DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"}, (
    f"RPLAB_LOG_LEVEL must be a standard logging level, got '{LOG_LEVEL}'."
)
assert OUTPUT_ROOT, "RPLAB_OUTPUT_DIR must not be empty."

# --- Experiment kinds ---
EXPERIMENTS: Final[Tuple[str, ...]] = (
    "localization",
    "flow-events",
    "subordination",
    "concentration",
    "regularity",
    "scaling-sweep",
)

# --- Model defaults ---
DEFAULT_ALPHA: Final[float] = 0.3
DEFAULT_GAMMA: Final[float] = 0.05
DEFAULT_ELL: Final[float] = 0.25
DEFAULT_BETA: Final[float] = 0.5
DEFAULT_WINDOW: Final[Tuple[float, float]] = (-0.25, 0.25)
DEFAULT_EPSILON: Final[float] = 0.25
DEFAULT_DENSITY: Final[str] = "uniform"
DEFAULT_GRID_SIZE: Final[int] = 64
DEFAULT_EVENT_POINTS: Final[int] = 512
DEFAULT_SITES: Final[int] = 16
DEFAULT_MU_GRID: Final[Tuple[float, ...]] = (0.2, 0.3, 0.4, 0.5, 0.6)
# Index space of the implicit lattice must stay within int64.
DEFAULT_GRID_BUDGET: Final[int] = 2**62
BULK_FRACTION: Final[float] = 0.8
SUBORDINATION_POINTS: Final[int] = 4
TRAJECTORY_DUMP_POINTS: Final[int] = 16

# --- Path refinement ---
# Each grid interval is split into 2**DYADIC_LEVELS ticks for bridge sampling.
DYADIC_LEVELS: Final[int] = 24
BRIDGE_CACHE_BYTES: Final[int] = 2**28

# --- Characteristic integration ---
ODE_STEPS_PER_HORIZON: Final[int] = 256
ODE_TOLERANCE: Final[float] = 1e-8
ODE_MIN_STEP_TICKS: Final[int] = 4
STOP_TOLERANCE_FRACTION: Final[float] = 1e-3
SPECTRUM_CACHE_SIZE: Final[int] = 4096
FIRST_ORDER_WINDOW_FRACTION: Final[float] = 1.0 / 256.0
CORRECTION_AUDIT_FRACTION: Final[float] = 0.01
CORRECTION_AUDIT_TOLERANCE: Final[float] = 1e-4
PREIMAGE_TOLERANCE: Final[float] = 1e-9
PREIMAGE_MAX_SHOTS: Final[int] = 12

# --- Fixed point for the deformed semicircle ---
FIXED_POINT_DAMPING: Final[float] = 0.5
FIXED_POINT_TOLERANCE: Final[float] = 1e-12
FIXED_POINT_MAX_ITER: Final[int] = 10_000

# --- Regularity probes ---
PROBE_TOLERANCE: Final[float] = 0.05
K_M_CAP: Final[float] = 5.0
K_L_FLOOR: Final[float] = 0.1
QUADRATURE_TOLERANCE: Final[float] = 1e-10
CONCENTRATION_POINT_BUDGET: Final[int] = 2_000_000

# --- Output ---
FLOAT_FORMAT: Final[str] = "%.17g"
MANIFEST_NAME: Final[str] = "manifest.json"
CONFIG_COPY_NAME: Final[str] = "experiment.cfg"

assert 0.0 < BULK_FRACTION <= 1.0, "BULK_FRACTION must lie in (0, 1]."
assert DEFAULT_WINDOW[0] < DEFAULT_WINDOW[1], "DEFAULT_WINDOW must be increasing."
assert 0 < DYADIC_LEVELS <= 32, "DYADIC_LEVELS must keep tick indices in int64."
assert 0.0 < FIXED_POINT_DAMPING <= 1.0, "FIXED_POINT_DAMPING must lie in (0, 1]."

# Fields whose values may differ between runs combined in one report.
VARIABLE_FIELDS: Final[Tuple[str, ...]] = (
    "N",
    "delta",
    "kappa",
    "theta",
    "master_seed",
    "output_dir",
    "ensemble",
    "sweep_N",
)


def default_kappa(delta: float) -> float:
    """Default support exponent: close to delta but below 1."""
    return min(delta + 0.2, (1.0 + delta) / 2.0)


def default_theta(delta: float) -> float:
    """Default sup-norm exponent: delta minus a desk-scale slack."""
    return delta - 0.15


@dataclass(frozen=True)
class ExperimentConfig:
    """Typed, immutable description of one experiment run."""

    experiment: str
    N: int
    delta: float
    alpha: float = DEFAULT_ALPHA
    kappa: float = float("nan")
    theta: float = float("nan")
    gamma: float = DEFAULT_GAMMA
    ell: float = DEFAULT_ELL
    beta: float = DEFAULT_BETA
    window_lo: float = DEFAULT_WINDOW[0]
    window_hi: float = DEFAULT_WINDOW[1]
    epsilon: float = DEFAULT_EPSILON
    density: str = DEFAULT_DENSITY
    ensemble: int = 1
    master_seed: int = 0
    grid_size: int = DEFAULT_GRID_SIZE
    grid_budget: int = DEFAULT_GRID_BUDGET
    event_points: int = DEFAULT_EVENT_POINTS
    sites: int = DEFAULT_SITES
    sweep_N: Tuple[int, ...] = ()
    mu_grid: Tuple[float, ...] = DEFAULT_MU_GRID
    zeta: Optional[float] = None
    output_dir: str = ""
    threads: int = 1
    first_order: bool = False

    def __post_init__(self) -> None:
        # delta-dependent defaults; the names are kept so a delta override re-derives them
        derived = []
        if math.isnan(self.kappa):
            object.__setattr__(self, "kappa", default_kappa(self.delta))
            derived.append("kappa")
        if math.isnan(self.theta):
            object.__setattr__(self, "theta", default_theta(self.delta))
            derived.append("theta")
        object.__setattr__(self, "_derived_exponents", tuple(derived))
        if not self.output_dir:
            object.__setattr__(self, "output_dir", OUTPUT_ROOT)

    @property
    def window(self) -> Tuple[float, float]:
        return (self.window_lo, self.window_hi)

    @property
    def n_values(self) -> Tuple[int, ...]:
        """Matrix sizes covered by the run: sweep_N when given, else (N,)."""
        return tuple(self.sweep_N) if self.sweep_N else (self.N,)

    def validate(self) -> List[str]:
        """Returns every violated constraint (empty when the config is valid)."""
        problems: List[str] = []
        if self.experiment not in EXPERIMENTS:
            problems.append(
                f"experiment must be one of {', '.join(EXPERIMENTS)}, got '{self.experiment}'"
            )
        if self.N < 2:
            problems.append(f"N must be at least 2, got {self.N}")
        for name in ("delta", "alpha", "kappa", "theta", "gamma", "ell", "beta"):
            value = getattr(self, name)
            if not 0.0 < value < 1.0:
                problems.append(f"{name} must lie in (0, 1), got {value}")
        if not self.kappa > self.delta > self.theta:
            problems.append(
                "exponents must satisfy kappa > delta > theta for the non-ergodicity "
                f"statement (got kappa={self.kappa}, delta={self.delta}, theta={self.theta})"
            )
        if not self.window_lo < self.window_hi:
            problems.append(
                f"window must satisfy window_lo < window_hi, got [{self.window_lo}, {self.window_hi}]"
            )
        if self.epsilon <= 0.0:
            problems.append(f"epsilon must be positive, got {self.epsilon}")
        if self.ensemble < 1:
            problems.append(f"ensemble must be at least 1, got {self.ensemble}")
        if self.master_seed < 0 or self.master_seed >= 2**64:
            problems.append(f"master_seed must be an unsigned 64-bit integer, got {self.master_seed}")
        if self.grid_size < 1:
            problems.append(f"grid_size must be at least 1, got {self.grid_size}")
        if self.grid_budget < 1:
            problems.append(f"grid_budget must be positive, got {self.grid_budget}")
        if self.event_points < 1:
            problems.append(f"event_points must be at least 1, got {self.event_points}")
        if self.sites < 1:
            problems.append(f"sites must be at least 1, got {self.sites}")
        if self.threads < 1:
            problems.append(f"threads must be at least 1, got {self.threads}")
        if any(n < 2 for n in self.sweep_N):
            problems.append(f"every sweep_N entry must be at least 2, got {list(self.sweep_N)}")
        if self.experiment == "scaling-sweep" and len(set(self.sweep_N)) < 3:
            problems.append(
                f"scaling-sweep needs at least 3 distinct sweep_N values, got {list(self.sweep_N)}"
            )
        if self.experiment == "concentration":
            if self.ensemble < 100:
                problems.append(f"concentration needs ensemble >= 100, got {self.ensemble}")
            if not self.mu_grid or any(mu <= 0.0 for mu in self.mu_grid):
                problems.append(f"mu_grid must be non-empty and positive, got {list(self.mu_grid)}")
        if self.zeta is not None and not 0.0 < self.zeta <= 1.0:
            problems.append(f"zeta must lie in (0, 1], got {self.zeta}")
        try:
            from .densities import get_density

            get_density(self.density)
        except ConfigurationError as e:
            problems.extend(e.violations)
        return problems

    def advisories(self) -> List[str]:
        """Returns proof-level exponent orderings that the config does not meet.

        Desk-scale runs violate these on purpose, so they are reported as
        warnings and never block a run.
        """
        notes: List[str] = []
        margin = self.kappa - (self.alpha + self.ell + self.delta)
        if not 0.0 < self.gamma < margin:
            notes.append(
                f"gamma={self.gamma} is outside (0, kappa - (alpha + ell + delta)) = (0, {margin:.6g}); "
                "the support bound then only holds asymptotically"
            )
        if not self.alpha + self.ell < self.delta - self.theta:
            notes.append(
                f"alpha + ell = {self.alpha + self.ell:.6g} is not below delta - theta = "
                f"{self.delta - self.theta:.6g}; the sup-norm bound then only holds asymptotically"
            )
        return notes

    def raise_if_invalid(self) -> None:
        problems = self.validate()
        if problems:
            raise ConfigurationError(problems)

    def with_overrides(self, **overrides: Any) -> "ExperimentConfig":
        """Returns a copy with the given fields replaced (None values are ignored).

        kappa and theta that were defaulted from delta follow a new delta;
        explicitly given exponents are kept.
        """
        changes = {k: v for k, v in overrides.items() if v is not None}
        if not changes:
            return self
        for name in self.derived_exponents:
            changes.setdefault(name, float("nan"))
        return replace(self, **changes)

    @property
    def derived_exponents(self) -> Tuple[str, ...]:
        """Exponents that took their delta-dependent default."""
        return getattr(self, "_derived_exponents", ())

    def to_dict(self) -> Dict[str, Any]:
        payload = asdict(self)
        payload["sweep_N"] = list(self.sweep_N)
        payload["mu_grid"] = list(self.mu_grid)
        return payload

    def config_hash(self) -> str:
        """SHA-256 over the result-relevant fields (output_dir and threads excluded)."""
        payload = self.to_dict()
        payload.pop("output_dir")
        payload.pop("threads")
        encoded = json.dumps(payload, sort_keys=True, default=repr).encode()
        return hashlib.sha256(encoded).hexdigest()

    def to_text(self) -> str:
        """Serializes the config back into the flat KEY=VALUE format."""
        lines = []
        for key, value in self.to_dict().items():
            if value is None:
                continue
            if isinstance(value, list):
                value = ",".join(repr(v) for v in value)
            elif isinstance(value, float):
                value = repr(value)
            lines.append(f"{key}={value}")
        return "\n".join(lines) + "\n"


def _coerce(name: str, raw: str, target: Any) -> Any:
    text = raw.strip()
    if name in ("sweep_N",):
        return tuple(int(part) for part in text.split(",") if part.strip())
    if name in ("mu_grid",):
        return tuple(float(part) for part in text.split(",") if part.strip())
    if name == "zeta":
        return None if text.lower() in ("", "none", "default") else float(text)
    if name == "first_order":
        if text.lower() in ("1", "true", "yes", "on"):
            return True
        if text.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: '{text}'")
    if target is int:
        return int(text, 0)
    if target is float:
        return float(text)
    return text


_FIELD_TYPES: Final[Dict[str, Any]] = {
    "experiment": str,
    "N": int,
    "delta": float,
    "alpha": float,
    "kappa": float,
    "theta": float,
    "gamma": float,
    "ell": float,
    "beta": float,
    "window_lo": float,
    "window_hi": float,
    "epsilon": float,
    "density": str,
    "ensemble": int,
    "master_seed": int,
    "grid_size": int,
    "grid_budget": int,
    "event_points": int,
    "sites": int,
    "sweep_N": tuple,
    "mu_grid": tuple,
    "zeta": float,
    "output_dir": str,
    "threads": int,
    "first_order": bool,
}

assert set(_FIELD_TYPES) == {f.name for f in fields(ExperimentConfig)}, (
    "_FIELD_TYPES is out of sync with ExperimentConfig."
)


def parse_experiment_config(values: Mapping[str, Optional[str]]) -> ExperimentConfig:
    """
    Builds an ExperimentConfig from raw string values.

    Args:
        values: Mapping of (case-insensitive) keys to raw string values.

    Returns:
        ExperimentConfig: The typed config. It is not validated here.

    Raises:
        ConfigurationError: On unknown keys, missing required keys or values
            that cannot be converted; all problems are reported together.
    """
    by_lower = {name.lower(): name for name in _FIELD_TYPES}
    kwargs: Dict[str, Any] = {}
    problems: List[str] = []
    for key, raw in values.items():
        name = by_lower.get(key.strip().lower())
        if name is None:
            problems.append(f"unknown key '{key}'")
            continue
        if raw is None:
            problems.append(f"key '{key}' has no value")
            continue
        try:
            kwargs[name] = _coerce(name, raw, _FIELD_TYPES[name])
        except ValueError as e:
            problems.append(f"cannot parse {name}='{raw}': {e}")
    for required in ("experiment", "N", "delta"):
        if required not in kwargs and not any(
            p.startswith(f"cannot parse {required}=") for p in problems
        ):
            problems.append(f"missing required key '{required}'")
    if problems:
        raise ConfigurationError(problems)
    return ExperimentConfig(**kwargs)


def load_experiment_config(path: str) -> ExperimentConfig:
    """
    Reads a flat KEY=VALUE experiment file.

    Raises:
        FileNotFoundError: If the file does not exist.
        ConfigurationError: If the file content cannot be parsed.
    """
    assert isinstance(path, str) and path, "path must be a non-empty string."
    if not os.path.isfile(path):
        raise FileNotFoundError(f"Experiment config '{path}' does not exist.")
    values = dotenv_values(path)
    if not values:
        raise ConfigurationError([f"config file '{path}' contains no keys"])
    return parse_experiment_config(values)


# Used when a field list is needed without an instance (reporting, tests).
CONFIG_FIELDS: Final[Tuple[str, ...]] = tuple(f.name for f in fields(ExperimentConfig))
