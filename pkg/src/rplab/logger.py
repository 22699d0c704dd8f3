"""Logging for the rplab laboratory.

One named logger is configured per process: by the CLI, by each worker of
the realization pool and by the test session. Records carry a process tag
("main" or "worker-<pid>") so interleaved pool output in the shared log file
can be told apart. While a run executes, `run_log` mirrors the records of
the current process into the run directory.
"""

import logging
import os
import sys
from contextlib import contextmanager
from typing import Final, Iterator, Optional


class LoggerDirectoryError(Exception):
    """Raised when a log directory cannot be created or written."""

    pass


APP_LOGGER_NAME: Final[str] = "RPLab"
RUN_LOG_NAME: Final[str] = "run.log"
LOG_FORMAT: Final[str] = (
    "%(asctime)s - %(name)s - %(levelname)s - %(process_tag)s - "
    "%(module)s.%(funcName)s:%(lineno)d - %(message)s"
)
LOG_DATEFMT: Final[str] = "%Y-%m-%d %H:%M:%S"

_logger_instance: Optional[logging.Logger] = None


class _ProcessTagFilter(logging.Filter):
    def __init__(self, tag: str) -> None:
        super().__init__()
        self.tag = tag

    def filter(self, record: logging.LogRecord) -> bool:
        record.process_tag = self.tag
        return True


def _ensure_directory(directory: str) -> None:
    try:
        os.makedirs(directory, exist_ok=True)
    except OSError as e:
        raise LoggerDirectoryError(f"Failed to create log directory '{directory}': {e}") from e
    if not os.access(directory, os.W_OK):
        raise LoggerDirectoryError(f"Log directory '{directory}' is not writable.")


def _file_handler(path: str) -> logging.FileHandler:
    handler = logging.FileHandler(path, mode="a", encoding="utf-8")
    handler.setFormatter(logging.Formatter(LOG_FORMAT, datefmt=LOG_DATEFMT))
    return handler


def setup_logging(
    level: str, log_file: str, output_dir: str, process_tag: str = "main", force: bool = False
) -> logging.Logger:
    """
    Configures and returns the application logger.

    Idempotent: once a logger exists in this process, later calls return it
    unchanged unless `force` is set. Forked pool workers inherit the parent's
    logger and pass `force` to install their own tag and handlers.

    Args:
        level (str): Logging level name, e.g. "DEBUG" or "INFO".
        log_file (str): File name inside "<output_dir>/logs".
        output_dir (str): Base output directory.
        process_tag (str): Tag stamped on every record of this process.
        force (bool): Reconfigure an existing logger.

    Returns:
        logging.Logger: The configured logger.

    Raises:
        LoggerDirectoryError: If the log directory cannot be created or is not writable.
        ValueError: If the level name is invalid.
    """
    global _logger_instance
    if _logger_instance is not None and not force:
        return _logger_instance

    numeric_level = getattr(logging, level.upper(), None)
    if not isinstance(numeric_level, int):
        raise ValueError(f"Invalid log level provided: {level}")

    log_directory = os.path.join(output_dir, "logs")
    _ensure_directory(log_directory)

    logger = logging.getLogger(APP_LOGGER_NAME)
    logger.setLevel(numeric_level)
    logger.propagate = False
    for handler in list(logger.handlers):
        logger.removeHandler(handler)
        handler.close()
    for old in list(logger.filters):
        logger.removeFilter(old)
    logger.addFilter(_ProcessTagFilter(process_tag))

    console_handler = logging.StreamHandler(sys.stdout)
    console_handler.setFormatter(logging.Formatter(LOG_FORMAT, datefmt=LOG_DATEFMT))
    logger.addHandler(console_handler)

    log_file_path = os.path.join(log_directory, log_file)
    try:
        logger.addHandler(_file_handler(log_file_path))
    except IOError as e:
        logger.error(f"Could not open log file '{log_file_path}': {e}. File logging will be disabled.")

    _logger_instance = logger
    logger.info(f"Logger initialized with level {level} ({process_tag}); writing to '{log_file_path}'.")
    return logger


def get_logger() -> logging.Logger:
    """
    Returns the configured logger.

    Raises:
        RuntimeError: If setup_logging() has not been called in this process.
    """
    if _logger_instance is None:
        raise RuntimeError(
            "Logger not initialized. Please call setup_logging() before requesting a logger."
        )
    return _logger_instance


@contextmanager
def run_log(run_dir: str) -> Iterator[str]:
    """Mirrors this process's records into <run_dir>/run.log while the block runs."""
    logger = get_logger()
    _ensure_directory(run_dir)
    path = os.path.join(run_dir, RUN_LOG_NAME)
    handler = _file_handler(path)
    logger.addHandler(handler)
    try:
        yield path
    finally:
        logger.removeHandler(handler)
        handler.close()


def _reset_logger() -> None:
    """Test hook: drops handlers and filters so setup can run again."""
    global _logger_instance
    if _logger_instance:
        logger = logging.getLogger(APP_LOGGER_NAME)
        for handler in list(logger.handlers):
            logger.removeHandler(handler)
            handler.close()
        for old in list(logger.filters):
            logger.removeFilter(old)
        logger.propagate = True
        _logger_instance = None
