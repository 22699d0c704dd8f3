"""Tests for the decorators.py module."""

import unittest
from unittest.mock import MagicMock, patch

from numpy.linalg import LinAlgError

from rplab.decorators import EIGH_DRIVERS, retry_with_drivers
from rplab.exceptions import NumericalFailure


class TestRetryWithDrivers(unittest.TestCase):
    """Tests for the retry_with_drivers decorator."""

    def setUp(self):
        self.mock_logger = MagicMock()
        patcher = patch("rplab.decorators.logger.get_logger", return_value=self.mock_logger)
        patcher.start()
        self.addCleanup(patcher.stop)

    def test_first_driver_success(self):
        calls = []

        @retry_with_drivers()
        def solve(x, driver):
            calls.append(driver)
            return x * 2

        self.assertEqual(solve(21), 42)
        self.assertEqual(calls, ["evr"])
        self.mock_logger.warning.assert_not_called()

    def test_falls_back_to_next_driver(self):
        calls = []

        @retry_with_drivers()
        def solve(driver):
            calls.append(driver)
            if driver == "evr":
                raise LinAlgError("no convergence")
            return driver

        self.assertEqual(solve(), "evd")
        self.assertEqual(calls, ["evr", "evd"])
        self.mock_logger.warning.assert_called_once()
        self.assertIn("driver 'evd'", self.mock_logger.warning.call_args[0][0])

    def test_every_driver_fails(self):
        @retry_with_drivers(drivers=("a", "b"))
        def solve(driver):
            raise LinAlgError(f"{driver} failed")

        with self.assertRaises(NumericalFailure) as ctx:
            solve(context={"seed": 5, "t": 0.25})
        failure = ctx.exception
        self.assertEqual(failure.context["seed"], 5)
        self.assertEqual(failure.context["drivers"], ["a", "b"])
        self.assertIsInstance(failure.__cause__, LinAlgError)
        self.assertIn("seed=5", str(failure))
        self.assertEqual(self.mock_logger.warning.call_count, 1)
        self.mock_logger.error.assert_called_once()

    def test_other_exceptions_propagate(self):
        @retry_with_drivers()
        def solve(driver):
            raise KeyError("unrelated")

        with self.assertRaises(KeyError):
            solve()

    def test_non_finite_input_is_not_retried(self):
        calls = []

        @retry_with_drivers()
        def solve(driver):
            calls.append(driver)
            raise ValueError("array must not contain infs or NaNs")

        with self.assertRaises(ValueError):
            solve()
        self.assertEqual(calls, ["evr"])
        self.mock_logger.warning.assert_not_called()

    def test_default_driver_order(self):
        self.assertEqual(EIGH_DRIVERS, ("evr", "evd", "ev"))


if __name__ == "__main__":
    unittest.main()
