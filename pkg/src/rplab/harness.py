"""Turns an ExperimentConfig into realizations, tables and a manifest."""

import math
import os
import platform
import time
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import asdict, dataclass, field
from typing import Any, Callable, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
import scipy

from . import __version__
from .characteristics import (
    PathSpectrum,
    subordination_check,
    track_flow_events,
    trajectory_frame_rows,
)
from .config import (
    BULK_FRACTION,
    CONFIG_COPY_NAME,
    LOG_FILE,
    LOG_LEVEL,
    SUBORDINATION_POINTS,
    TRAJECTORY_DUMP_POINTS,
    ExperimentConfig,
)
from .ensemble import (
    ModelParams,
    assemble_snapshot,
    sample_dyson_path,
    sample_potential,
)
from .exceptions import ConfigurationError, NumericalFailure
from .flow_grid import build_grid, upsilon
from .localization import CHECK_COLUMNS, LOCALIZATION_COLUMNS, fit_scaling, localization_report, reports_frame
from .logger import get_logger, run_log, setup_logging
from .persistence import RunStore
from .regularity import concentration_experiment, verify_assumption
from .seeding import PURPOSE_TAGS, derive_seed, stream
from .spectral import UpperHalfPoint, eigendecompose

# Seed purposes drawn for every realization.
REALIZATION_PURPOSES: Tuple[str, ...] = ("potential", "path", "sites", "grid-subsample")


@dataclass(frozen=True)
class Task:
    index: int
    run_id: str
    N: int


@dataclass
class RealizationResult:
    task: Task
    frames: Dict[str, pd.DataFrame] = field(default_factory=dict)
    seeds: Dict[str, int] = field(default_factory=dict)
    elapsed: float = 0.0
    error: Optional[str] = None
    config_errors: List[str] = field(default_factory=list)


@dataclass
class RunManifest:
    experiment: str
    config_hash: str
    software_version: str
    config: Dict[str, Any]
    seeds: Dict[str, Dict[str, int]]
    timings: Dict[str, float]
    realizations_ok: int
    failures: List[Dict[str, str]]
    environment: Dict[str, str]

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def realization_seeds(master_seed: int, index: int) -> Dict[str, int]:
    return {purpose: derive_seed(master_seed, index, purpose) for purpose in REALIZATION_PURPOSES}


def _params(config: ExperimentConfig, N: int) -> ModelParams:
    return ModelParams(N=N, delta=config.delta, alpha=config.alpha)


def _pick_sites(N: int, count: int, seed: int) -> List[int]:
    if count >= N:
        return list(range(N))
    rng = stream(seed, PURPOSE_TAGS["sites"])
    return sorted(int(x) for x in rng.choice(N, size=count, replace=False))


def _localization(config: ExperimentConfig, task: Task, seeds: Dict[str, int]) -> Dict[str, pd.DataFrame]:
    params = _params(config, task.N)
    V = sample_potential(params, config.density, seeds["potential"])
    path = sample_dyson_path(params, config.grid_size, seeds["path"])
    spec = eigendecompose(assemble_snapshot(V, path, path.grid_size))
    reports = localization_report(
        spec, V, config.window, (config.kappa, config.theta, config.gamma), eta=params.eta
    )
    frame = reports_frame(task.run_id, config.delta, reports)
    return {
        "localization": frame[list(LOCALIZATION_COLUMNS)],
        "localization_checks": frame[list(CHECK_COLUMNS)],
    }


def _flow_events(config: ExperimentConfig, task: Task, seeds: Dict[str, int]) -> Dict[str, pd.DataFrame]:
    params = _params(config, task.N)
    V = sample_potential(params, config.density, seeds["potential"])
    path = sample_dyson_path(params, config.grid_size, seeds["path"])
    grid = build_grid(params, V, config.theta, config.gamma, config.window, config.grid_budget)
    sites = _pick_sites(task.N, config.sites, seeds["sites"])
    spectrum = PathSpectrum(path, V, sites, first_order=config.first_order)
    events = track_flow_events(
        path, V, grid, config.ell, sites,
        params=params, beta=config.beta, event_points=config.event_points,
        subsample_seed=seeds["grid-subsample"], spectrum=spectrum,
    )
    verdict = verify_assumption(V, params, config.window, config.epsilon)
    inverse_threshold = 4.0 / (verdict.K_l_fit * params.eta) if verdict.K_l_fit > 0 else math.inf
    events_frame = pd.DataFrame(
        [
            (task.run_id, "A_S", events.A_S_statistic, events.A_S_threshold, events.A_S_occurred),
            (task.run_id, "A_G", events.A_G_statistic, events.A_G_threshold, events.A_G_occurred),
            (task.run_id, "inverse_im_sq", events.inverse_im_sq_max, inverse_threshold,
             events.inverse_im_sq_max > inverse_threshold),
        ],
        columns=["run_id", "statistic_name", "value", "threshold", "occurred"],
    )
    grid_frame = pd.DataFrame(
        [{
            "run_id": task.run_id, "N": task.N, "eta": params.eta, "T": params.T, "r": grid.r,
            "upsilon": grid.upsilon, "cardinality": grid.cardinality,
            "covering_constant": grid.covering_constant, "points_evaluated": events.points_evaluated,
            "domain_points": events.domain_points, "subsample_seed": events.subsample_seed,
            "K_l_fit": verdict.K_l_fit,
        }]
    )
    dumped = events.trajectories[:TRAJECTORY_DUMP_POINTS]
    trajectories = pd.DataFrame(
        trajectory_frame_rows(task.run_id, dumped),
        columns=["run_id", "z0_re", "z0_im", "t", "xi_re", "xi_im", "S_re", "S_im", "stopped"],
    )
    return {"events": events_frame, "grid": grid_frame, "trajectories": trajectories}


def bulk_points(window: Tuple[float, float], height: float, count: int) -> List[UpperHalfPoint]:
    """`count` evenly spaced points at the given height in the central bulk of the window."""
    centre = 0.5 * (window[0] + window[1])
    half = 0.5 * BULK_FRACTION * (window[1] - window[0])
    return [
        UpperHalfPoint(centre + half * (2.0 * (k + 0.5) / count - 1.0), height) for k in range(count)
    ]


def _subordination(config: ExperimentConfig, task: Task, seeds: Dict[str, int]) -> Dict[str, pd.DataFrame]:
    params = _params(config, task.N)
    V = sample_potential(params, config.density, seeds["potential"])
    path = sample_dyson_path(params, config.grid_size, seeds["path"])
    spectrum = PathSpectrum(path, V, first_order=config.first_order)
    verdict = verify_assumption(V, params, config.window, config.epsilon)
    ups, _ = upsilon(V, params)
    sites = _pick_sites(task.N, config.sites, seeds["sites"])
    rows = []
    for z in bulk_points(config.window, params.eta, SUBORDINATION_POINTS):
        result = subordination_check(path, V, z, sites, eta=params.eta, spectrum=spectrum)
        shift = abs(result.w.z - z.z)
        for site, error in zip(result.sites, result.relative_errors):
            rows.append({
                "run_id": task.run_id, "N": task.N, "z_re": z.re, "z_im": z.im,
                "w_re": result.w.re, "w_im": result.w.im, "site": site, "rel_error": float(error),
                "im_w_ratio": result.w.im / (0.5 * verdict.K_l_fit * params.T) if verdict.K_l_fit > 0 else math.inf,
                "shift_ratio": shift / (ups * params.T),
            })
    return {"subordination": pd.DataFrame(rows)}


def _regularity(config: ExperimentConfig, task: Task, seeds: Dict[str, int]) -> Dict[str, pd.DataFrame]:
    rows = []
    for N in config.n_values:
        params = _params(config, N)
        V = sample_potential(params, config.density, seeds["potential"])
        verdict = verify_assumption(V, params, config.window, config.epsilon)
        rows.append({
            "run_id": task.run_id, "N": N, "eta": params.eta, "sup_abs_s0": verdict.sup_abs_s0,
            "inf_im_s0": verdict.inf_im_s0, "K_m_fit": verdict.K_m_fit, "K_m_cor_fit": verdict.K_m_cor_fit,
            "K_l_fit": verdict.K_l_fit, "passes_m": verdict.passes[0], "passes_l": verdict.passes[1],
            "spacing": verdict.spacing,
        })
    return {"regularity": pd.DataFrame(rows)}


def _concentration(config: ExperimentConfig, task: Task, seeds: Dict[str, int]) -> Dict[str, pd.DataFrame]:
    params = _params(config, task.N)
    seed = seeds["potential"]
    estimate = concentration_experiment(
        config.density, params, config.window, config.zeta, list(config.mu_grid), config.ensemble, seed,
    )
    tails = pd.DataFrame({
        "density": config.density, "N": task.N, "zeta": estimate.zeta, "mu": list(estimate.mu_grid),
        "tail_prob": estimate.tail_prob, "ensemble": estimate.ensemble_size, "seed": str(seed),
    })
    reference = pd.DataFrame({
        "N": task.N, "z_re": estimate.lattice.real, "z_im": estimate.lattice.imag,
        "expected_im_s0": estimate.reference,
    })
    return {"concentration": tails, "concentration_reference": reference}


_REALIZERS: Dict[str, Callable[[ExperimentConfig, Task, Dict[str, int]], Dict[str, pd.DataFrame]]] = {
    "localization": _localization,
    "scaling-sweep": _localization,
    "flow-events": _flow_events,
    "subordination": _subordination,
    "regularity": _regularity,
    "concentration": _concentration,
}


def build_tasks(config: ExperimentConfig) -> List[Task]:
    """Realization tasks in a fixed order; the task index keys the seeds."""
    name = config.experiment
    if name == "scaling-sweep":
        pairs = [(N, i) for N in config.n_values for i in range(config.ensemble)]
        return [Task(k, f"{name}-N{N}-r{i:04d}", N) for k, (N, i) in enumerate(pairs)]
    if name == "concentration":
        return [Task(k, f"{name}-N{N}", N) for k, N in enumerate(config.n_values)]
    return [Task(i, f"{name}-r{i:04d}", config.N) for i in range(config.ensemble)]


def run_task(config: ExperimentConfig, task: Task) -> RealizationResult:
    """Runs one realization; failures are logged and returned, never raised."""
    log = get_logger()
    seeds = realization_seeds(config.master_seed, task.index)
    result = RealizationResult(task=task, seeds=seeds)
    start = time.perf_counter()
    log.info(f"[{task.run_id}] starting realization (N={task.N}).")
    try:
        result.frames = _REALIZERS[config.experiment](config, task, seeds)
    except ConfigurationError as e:
        log.error(f"[{task.run_id}] configuration problem: {e}")
        result.config_errors = e.violations
        result.error = str(e)
    except Exception as e:
        log.error(f"[{task.run_id}] realization failed: {e}", exc_info=True)
        result.error = f"{type(e).__name__}: {e}"
    finally:
        result.elapsed = time.perf_counter() - start
        log.info(f"[{task.run_id}] finished in {result.elapsed:.2f}s.")
    return result


def localization_frame(config: ExperimentConfig, index: int) -> pd.DataFrame:
    """Localization rows of the realization with task index `index`.

    For scaling sweeps the index runs over the whole sweep (N-major), matching
    `build_tasks`, so the rows equal those of the harness run.
    """
    if config.experiment == "scaling-sweep":
        run_id = f"{config.experiment}-N{config.N}-r{index % config.ensemble:04d}"
    else:
        run_id = f"{config.experiment}-r{index:04d}"
    task = Task(index, run_id, config.N)
    seeds = realization_seeds(config.master_seed, index)
    frames = _localization(config, task, seeds)
    return frames["localization"]


def _init_worker(level: str, log_file: str, output_dir: str) -> None:
    setup_logging(level, log_file, output_dir, process_tag=f"worker-{os.getpid()}", force=True)


class ExperimentRunner:
    """Runs every realization of a config and writes the aggregate tables."""

    def __init__(self, config: ExperimentConfig, store: Optional[RunStore] = None, logger: Optional[Any] = None) -> None:
        self.config = config
        self.logger = logger if logger else get_logger()
        self.store = store if store else RunStore(config.output_dir, logger=self.logger)
        self.timings: Dict[str, float] = {}

    def _execute(self, tasks: List[Task]) -> List[RealizationResult]:
        if self.config.threads == 1 or len(tasks) == 1:
            return [run_task(self.config, task) for task in tasks]
        results = []
        with ProcessPoolExecutor(
            max_workers=self.config.threads,
            initializer=_init_worker,
            initargs=(LOG_LEVEL, LOG_FILE, self.config.output_dir),
        ) as pool:
            futures = [pool.submit(run_task, self.config, task) for task in tasks]
            for future in as_completed(futures):
                results.append(future.result())
        return sorted(results, key=lambda r: r.task.index)

    def _aggregate(self, results: List[RealizationResult]) -> Dict[str, pd.DataFrame]:
        tables: Dict[str, List[pd.DataFrame]] = {}
        for result in results:
            for name, frame in result.frames.items():
                tables.setdefault(name, []).append(frame)
        merged = {name: pd.concat(frames, ignore_index=True) for name, frames in tables.items()}
        if self.config.experiment == "scaling-sweep" and "localization" in merged:
            fitted = fit_scaling(merged["localization"])
            merged["scaling"] = fitted.per_n.assign(delta=self.config.delta)
            merged["slopes"] = fitted.slopes.assign(delta=self.config.delta)
        return merged

    def run(self) -> RunManifest:
        """
        Executes the experiment.

        Raises:
            ConfigurationError: If the config is invalid or a realization hits
                a configuration limit (such as the grid budget).
            NumericalFailure: If every realization failed; the manifest is
                written before raising.
            IOError: If outputs cannot be written.
        """
        config = self.config
        config.raise_if_invalid()
        for note in config.advisories():
            self.logger.warning(f"[{config.experiment}] advisory: {note}")
        tasks = build_tasks(config)
        assert tasks, "a run needs at least one realization."
        with run_log(self.store.run_dir):
            return self._run_tasks(tasks)

    def _run_tasks(self, tasks: List[Task]) -> RunManifest:
        config = self.config
        self.logger.info(
            f"[{config.experiment}] running {len(tasks)} realizations with {config.threads} worker(s) "
            f"into {self.store.run_dir}."
        )

        start = time.perf_counter()
        results = self._execute(tasks)
        self.timings["realizations"] = time.perf_counter() - start

        config_errors = sorted({v for r in results for v in r.config_errors})
        if config_errors:
            raise ConfigurationError(config_errors)

        start = time.perf_counter()
        tables = self._aggregate([r for r in results if r.error is None])
        self.timings["aggregate"] = time.perf_counter() - start

        start = time.perf_counter()
        for name, frame in sorted(tables.items()):
            self.store.write_frame(f"{name}.csv", frame)
        self.store.write_text(CONFIG_COPY_NAME, config.to_text())
        self.timings["write"] = time.perf_counter() - start

        failures = [{"run_id": r.task.run_id, "error": r.error or ""} for r in results if r.error]
        manifest = RunManifest(
            experiment=config.experiment,
            config_hash=config.config_hash(),
            software_version=__version__,
            config=config.to_dict(),
            seeds={r.task.run_id: {k: int(v) for k, v in r.seeds.items()} for r in results},
            timings=dict(self.timings, **{f"realization:{r.task.run_id}": r.elapsed for r in results}),
            realizations_ok=len(results) - len(failures),
            failures=failures,
            environment={
                "python": platform.python_version(),
                "numpy": np.__version__,
                "scipy": scipy.__version__,
                "pandas": pd.__version__,
            },
        )
        self.store.write_manifest(manifest.to_dict())
        self.logger.info(
            f"[{config.experiment}] {manifest.realizations_ok}/{len(results)} realizations succeeded."
        )
        if len(failures) == len(results):
            raise NumericalFailure(
                "every realization failed", context={"experiment": config.experiment, "count": len(results)}
            )
        return manifest


def sample(config: ExperimentConfig, store: Optional[RunStore] = None, index: int = 0) -> Dict[str, pd.DataFrame]:
    """Draws one realization and writes potential.csv and spectrum.csv."""
    config.raise_if_invalid()
    store = store if store else RunStore(config.output_dir)
    seeds = realization_seeds(config.master_seed, index)
    params = _params(config, config.N)
    V = sample_potential(params, config.density, seeds["potential"])
    path = sample_dyson_path(params, config.grid_size, seeds["path"])
    spec = eigendecompose(assemble_snapshot(V, path, path.grid_size), values_only=True)
    potential = pd.DataFrame({"site": np.arange(V.N), "V": V.values})
    spectrum = pd.DataFrame({"index": np.arange(spec.N), "eigenvalue": spec.eigenvalues})
    store.write_frame("potential.csv", potential)
    store.write_frame("spectrum.csv", spectrum)
    in_window = int(np.sum((spec.eigenvalues >= config.window_lo) & (spec.eigenvalues <= config.window_hi)))
    get_logger().info(
        f"[sample] N={V.N}, T={params.T:.6g}, eta={params.eta:.6g}: spectrum in "
        f"[{spec.eigenvalues[0]:.6g}, {spec.eigenvalues[-1]:.6g}], {in_window} eigenvalues in W."
    )
    return {"potential": potential, "spectrum": spectrum}
