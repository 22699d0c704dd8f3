"""Numerical laboratory for the Rosenzweig-Porter model as a matrix Brownian motion."""

__version__ = "1.0.0"
