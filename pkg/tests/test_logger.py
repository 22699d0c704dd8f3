"""Tests for the logger.py module."""

import logging
import os
import shutil
import tempfile
import unittest
from unittest.mock import patch

from rplab import logger as logger_module

from .conftest import ensure_logging


class TestLogger(unittest.TestCase):
    """Test suite for the logger module."""

    def setUp(self):
        """Start every test from an unconfigured logger."""
        logger_module._reset_logger()
        self.output_dir = tempfile.mkdtemp()
        self.log_file = os.path.join(self.output_dir, "logs", "test_rplab.log")

    def tearDown(self):
        """Reset the logger and restore the session configuration."""
        logger_module._reset_logger()
        shutil.rmtree(self.output_dir, ignore_errors=True)
        ensure_logging()

    def test_successful_initialization(self):
        """Test that a logger can be initialized successfully."""
        logger = logger_module.setup_logging(
            level="DEBUG", log_file="test_rplab.log", output_dir=self.output_dir
        )
        self.assertIsInstance(logger, logging.Logger)
        self.assertEqual(logger.name, logger_module.APP_LOGGER_NAME)
        self.assertEqual(logger.level, logging.DEBUG)
        self.assertFalse(logger.propagate)
        self.assertTrue(any(isinstance(h, logging.StreamHandler) for h in logger.handlers))
        self.assertTrue(any(isinstance(h, logging.FileHandler) for h in logger.handlers))
        self.assertTrue(os.path.isfile(self.log_file))

    def test_get_logger_before_setup(self):
        """Test that get_logger raises an error if called before setup."""
        with self.assertRaisesRegex(RuntimeError, "Logger not initialized"):
            logger_module.get_logger()

    def test_setup_is_idempotent(self):
        first = logger_module.setup_logging("INFO", "test_rplab.log", self.output_dir)
        second = logger_module.setup_logging("DEBUG", "other.log", self.output_dir)
        self.assertIs(first, second)
        self.assertEqual(second.level, logging.INFO)
        self.assertIs(logger_module.get_logger(), first)

    def test_force_reconfigures(self):
        first = logger_module.setup_logging("INFO", "test_rplab.log", self.output_dir)
        again = logger_module.setup_logging(
            "DEBUG", "test_rplab.log", self.output_dir, process_tag="worker-1", force=True
        )
        self.assertIs(first, again)
        self.assertEqual(again.level, logging.DEBUG)
        self.assertEqual(len(again.handlers), 2)
        self.assertEqual([f.tag for f in again.filters], ["worker-1"])

    def test_invalid_log_level(self):
        with self.assertRaisesRegex(ValueError, "Invalid log level"):
            logger_module.setup_logging("LOUD", "test_rplab.log", self.output_dir)

    @patch("rplab.logger.os.makedirs", side_effect=OSError("read-only file system"))
    def test_directory_creation_failure(self, mock_makedirs):
        with self.assertRaises(logger_module.LoggerDirectoryError):
            logger_module.setup_logging("INFO", "test_rplab.log", self.output_dir)
        mock_makedirs.assert_called_once()

    @patch("rplab.logger.os.access", return_value=False)
    def test_unwritable_directory(self, mock_access):
        with self.assertRaisesRegex(logger_module.LoggerDirectoryError, "not writable"):
            logger_module.setup_logging("INFO", "test_rplab.log", self.output_dir)

    def test_messages_reach_the_log_file(self):
        logger = logger_module.setup_logging("INFO", "test_rplab.log", self.output_dir)
        logger.info("[localization-r0000] hello")
        for handler in logger.handlers:
            handler.flush()
        with open(self.log_file, encoding="utf-8") as f:
            content = f.read()
        self.assertIn("[localization-r0000] hello", content)
        self.assertIn(" - RPLab - INFO - main - ", content)

    def test_process_tag_is_stamped(self):
        logger = logger_module.setup_logging(
            "INFO", "test_rplab.log", self.output_dir, process_tag="worker-7"
        )
        logger.info("tagged")
        for handler in logger.handlers:
            handler.flush()
        with open(self.log_file, encoding="utf-8") as f:
            self.assertIn(" - worker-7 - ", f.read())

    def test_run_log_mirrors_records_inside_the_block(self):
        logger = logger_module.setup_logging("INFO", "test_rplab.log", self.output_dir)
        run_dir = os.path.join(self.output_dir, "run")
        with logger_module.run_log(run_dir) as path:
            logger.info("inside the run")
        logger.info("after the run")
        self.assertEqual(path, os.path.join(run_dir, logger_module.RUN_LOG_NAME))
        with open(path, encoding="utf-8") as f:
            content = f.read()
        self.assertIn("inside the run", content)
        self.assertNotIn("after the run", content)
        self.assertEqual(len(logger.handlers), 2)

    def test_run_log_requires_setup(self):
        with self.assertRaisesRegex(RuntimeError, "Logger not initialized"):
            with logger_module.run_log(self.output_dir):
                pass


if __name__ == "__main__":
    unittest.main()
