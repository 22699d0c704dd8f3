"""
Configuration and fixtures for the pytest test suite.

This file provides shared fixtures (small potentials, paths and model
parameters) so the module tests stay short.
"""

import atexit
import logging
import shutil
import tempfile
from unittest.mock import MagicMock

import numpy as np
import pytest

from rplab import config as app_config
from rplab.ensemble import ModelParams, Potential, sample_dyson_path, sample_potential
from rplab.logger import LoggerDirectoryError, setup_logging

# Logs of the test session go to a private temporary directory.
TEST_OUTPUT_DIR = tempfile.mkdtemp(prefix="rplab-tests-")
atexit.register(shutil.rmtree, TEST_OUTPUT_DIR, True)


def ensure_logging() -> None:
    """(Re)initializes the application logger for tests."""
    setup_logging(
        level="DEBUG",
        log_file=app_config.LOG_FILE,
        output_dir=TEST_OUTPUT_DIR,
    )


def pytest_configure(config):
    """Initializes the logger once before any tests are collected."""
    try:
        ensure_logging()
    except (LoggerDirectoryError, ValueError) as e:
        pytest.fail(f"Failed to initialize logger for tests: {e}")


@pytest.fixture
def mock_logger() -> MagicMock:
    """Provides a fixture for a mock logger."""
    return MagicMock(spec=logging.Logger)


@pytest.fixture(scope="session")
def small_params() -> ModelParams:
    """N=40 with the default exponents used across module tests."""
    return ModelParams(N=40, delta=0.5, alpha=0.3)


@pytest.fixture(scope="session")
def small_potential(small_params: ModelParams) -> Potential:
    return sample_potential(small_params, "uniform", seed=101)


@pytest.fixture
def small_path(small_params: ModelParams):
    """A fresh path per test so caches never leak between tests."""
    return sample_dyson_path(small_params, grid_size=8, seed=202)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(12345)
