"""Tests for the harness.py module."""

import filecmp
import json
import os
from unittest.mock import patch

import numpy as np
import pandas as pd
import pytest

from rplab.config import ExperimentConfig, load_experiment_config
from rplab.exceptions import ConfigurationError, NumericalFailure
from rplab.harness import (
    ExperimentRunner,
    Task,
    build_tasks,
    bulk_points,
    localization_frame,
    realization_seeds,
    run_task,
    sample,
)
from rplab.localization import LOCALIZATION_COLUMNS, scaling_sweep
from rplab.persistence import RunStore
from rplab.seeding import derive_seed


def _config(tmp_path, **overrides) -> ExperimentConfig:
    base = ExperimentConfig(
        experiment="localization", N=60, delta=0.5, ensemble=2, master_seed=1234,
        grid_size=4, output_dir=str(tmp_path / "run"),
    )
    return base.with_overrides(**overrides)


def _run(config: ExperimentConfig, mock_logger):
    store = RunStore(config.output_dir, logger=mock_logger)
    return ExperimentRunner(config, store=store, logger=mock_logger).run(), store


class TestTasksAndSeeds:
    def test_run_ids(self, tmp_path):
        cfg = _config(tmp_path, ensemble=3)
        assert [t.run_id for t in build_tasks(cfg)] == [
            "localization-r0000", "localization-r0001", "localization-r0002",
        ]
        sweep = cfg.with_overrides(experiment="scaling-sweep", sweep_N=(40, 50, 60), ensemble=2)
        tasks = build_tasks(sweep)
        assert [t.run_id for t in tasks][:3] == [
            "scaling-sweep-N40-r0000", "scaling-sweep-N40-r0001", "scaling-sweep-N50-r0000",
        ]
        assert [t.index for t in tasks] == list(range(6))
        conc = cfg.with_overrides(experiment="concentration", sweep_N=(40, 80), ensemble=100)
        assert [(t.run_id, t.N) for t in build_tasks(conc)] == [
            ("concentration-N40", 40), ("concentration-N80", 80),
        ]

    def test_seeds_follow_the_master_seed(self):
        seeds = realization_seeds(7, 3)
        assert seeds["potential"] == derive_seed(7, 3, "potential")
        assert set(seeds) == {"potential", "path", "sites", "grid-subsample"}

    def test_bulk_points(self):
        points = bulk_points((-0.25, 0.25), 0.1, 4)
        assert [p.re for p in points] == pytest.approx([-0.15, -0.05, 0.05, 0.15])
        assert all(p.im == 0.1 for p in points)


class TestLocalizationRuns:
    def test_outputs_and_manifest(self, tmp_path, mock_logger):
        cfg = _config(tmp_path)
        manifest, store = _run(cfg, mock_logger)
        assert manifest.realizations_ok == 2
        assert manifest.failures == []
        frame = store.read_frame("localization.csv")
        assert list(frame.columns) == list(LOCALIZATION_COLUMNS)
        assert set(frame["run_id"]) == {"localization-r0000", "localization-r0001"}
        with open(store.path("manifest.json"), encoding="utf-8") as f:
            saved = json.load(f)
        assert saved["outputs"] == ["experiment.cfg", "localization.csv", "localization_checks.csv"]
        assert saved["config_hash"] == cfg.config_hash()
        assert saved["seeds"]["localization-r0001"]["path"] == derive_seed(1234, 1, "path")
        assert load_experiment_config(store.path("experiment.cfg")) == cfg
        with open(store.path("run.log"), encoding="utf-8") as f:
            assert "[localization-r0001] starting realization" in f.read()

    def test_tables_are_reproducible(self, tmp_path, mock_logger):
        first, store_a = _run(_config(tmp_path / "a"), mock_logger)
        second, store_b = _run(_config(tmp_path / "b"), mock_logger)
        for name in ("localization.csv", "localization_checks.csv"):
            assert filecmp.cmp(store_a.path(name), store_b.path(name), shallow=False)

    def test_worker_pool_matches_sequential(self, tmp_path, mock_logger):
        _, sequential = _run(_config(tmp_path / "seq"), mock_logger)
        _, pooled = _run(_config(tmp_path / "pool", threads=2), mock_logger)
        assert filecmp.cmp(sequential.path("localization.csv"), pooled.path("localization.csv"), shallow=False)

    def test_localization_frame_matches_the_run(self, tmp_path, mock_logger):
        cfg = _config(tmp_path)
        _, store = _run(cfg, mock_logger)
        frame = store.read_frame("localization.csv")
        single = localization_frame(cfg, 1)
        run_rows = frame[frame["run_id"] == "localization-r0001"].reset_index(drop=True)
        np.testing.assert_array_equal(run_rows["ipr"].to_numpy(), single["ipr"].to_numpy())

    def test_invalid_config_is_refused(self, tmp_path, mock_logger):
        with pytest.raises(ConfigurationError, match="kappa > delta > theta"):
            _run(_config(tmp_path, kappa=0.4), mock_logger)
        assert not os.path.exists(tmp_path / "run")


class TestFailureHandling:
    def test_partial_failure_is_recorded(self, tmp_path, mock_logger):
        from rplab import harness

        real = harness._localization

        def sometimes(config, task, seeds):
            if task.index == 0:
                raise NumericalFailure("simulated", context={"seed": seeds["path"]})
            return real(config, task, seeds)

        with patch.dict(harness._REALIZERS, {"localization": sometimes}):
            manifest, store = _run(_config(tmp_path), mock_logger)
        assert manifest.realizations_ok == 1
        assert manifest.failures[0]["run_id"] == "localization-r0000"
        assert "simulated" in manifest.failures[0]["error"]
        assert set(store.read_frame("localization.csv")["run_id"]) == {"localization-r0001"}

    def test_total_failure_raises_after_the_manifest(self, tmp_path, mock_logger):
        from rplab import harness

        def always(config, task, seeds):
            raise FloatingPointError("boom")

        cfg = _config(tmp_path)
        with patch.dict(harness._REALIZERS, {"localization": always}):
            with pytest.raises(NumericalFailure, match="every realization failed"):
                _run(cfg, mock_logger)
        assert RunStore(cfg.output_dir, logger=mock_logger).load_manifest()["realizations_ok"] == 0

    def test_configuration_limits_abort_the_run(self, tmp_path, mock_logger):
        cfg = _config(tmp_path, experiment="flow-events", N=30, ensemble=1, grid_budget=10)
        with pytest.raises(ConfigurationError, match="budget 10"):
            _run(cfg, mock_logger)

    def test_run_task_never_raises(self, tmp_path):
        cfg = _config(tmp_path, density="uniform", grid_budget=10, experiment="flow-events", N=30)
        result = run_task(cfg, Task(0, "flow-events-r0000", 30))
        assert result.config_errors
        assert result.frames == {}
        assert result.elapsed >= 0.0


class TestOtherExperiments:
    def test_scaling_sweep_writes_the_fit(self, tmp_path, mock_logger):
        cfg = _config(tmp_path, experiment="scaling-sweep", sweep_N=(40, 60, 80), ensemble=1)
        _, store = _run(cfg, mock_logger)
        scaling = store.read_frame("scaling.csv")
        assert list(scaling["N"]) == [40, 60, 80]
        slopes = store.read_frame("slopes.csv")
        assert set(slopes["quantity"]) == {"ipr", "sup_norm_sq", "mass_outside"}
        assert (slopes["delta"] == 0.5).all()

    def test_scaling_sweep_function_reproduces_the_run(self, tmp_path, mock_logger):
        cfg = _config(tmp_path, experiment="scaling-sweep", sweep_N=(40, 60, 80), ensemble=2)
        _, store = _run(cfg, mock_logger)
        from_run = store.read_frame("localization.csv")
        captured = []

        def realize(config, index):
            rows = localization_frame(config, index)
            captured.append(rows)
            return rows

        table = scaling_sweep([cfg.with_overrides(N=n) for n in cfg.sweep_N], realize=realize)
        swept = pd.concat(captured, ignore_index=True)
        assert set(swept["run_id"]) == set(from_run["run_id"])
        for run_id, rows in swept.groupby("run_id"):
            expected = from_run[from_run["run_id"] == run_id]
            np.testing.assert_array_equal(expected["ipr"].to_numpy(), rows["ipr"].to_numpy())
        scaling = store.read_frame("scaling.csv")
        np.testing.assert_array_equal(scaling["median_ipr"].to_numpy(), table.per_n["median_ipr"].to_numpy())

    def test_regularity(self, tmp_path, mock_logger):
        cfg = _config(tmp_path, experiment="regularity", sweep_N=(100, 200), ensemble=1)
        _, store = _run(cfg, mock_logger)
        frame = store.read_frame("regularity.csv")
        assert list(frame["N"]) == [100, 200]
        assert (frame["K_l_fit"] > 0.0).all()

    def test_concentration(self, tmp_path, mock_logger):
        cfg = _config(tmp_path, experiment="concentration", N=40, ensemble=100, mu_grid=(0.3, 0.5))
        _, store = _run(cfg, mock_logger)
        tails = store.read_frame("concentration.csv")
        assert list(tails["mu"]) == [0.3, 0.5]
        assert tails["tail_prob"].iloc[0] >= tails["tail_prob"].iloc[1]
        assert store.has("concentration_reference.csv")

    def test_flow_events(self, tmp_path, mock_logger):
        cfg = _config(
            tmp_path, experiment="flow-events", N=24, delta=0.3, ensemble=1,
            event_points=3, sites=2,
        )
        _, store = _run(cfg, mock_logger)
        events = store.read_frame("events.csv")
        assert list(events["statistic_name"]) == ["A_S", "A_G", "inverse_im_sq"]
        grid = store.read_frame("grid.csv")
        assert grid["points_evaluated"].iloc[0] == 3
        trajectories = store.read_frame("trajectories.csv")
        assert trajectories.groupby(["z0_re", "z0_im"]).ngroups == 3
        assert trajectories["stopped"].sum() <= 3

    @pytest.mark.slow
    def test_subordination(self, tmp_path, mock_logger):
        cfg = _config(tmp_path, experiment="subordination", N=24, delta=0.3, ensemble=1, sites=2)
        _, store = _run(cfg, mock_logger)
        frame = store.read_frame("subordination.csv")
        assert len(frame) == 4 * 2
        assert (frame["rel_error"] >= 0.0).all()

    def test_sample(self, tmp_path, mock_logger):
        cfg = _config(tmp_path)
        store = RunStore(cfg.output_dir, logger=mock_logger)
        tables = sample(cfg, store)
        assert list(tables["spectrum"].columns) == ["index", "eigenvalue"]
        assert len(store.read_frame("potential.csv")) == cfg.N
        assert store.read_frame("spectrum.csv")["eigenvalue"].is_monotonic_increasing
