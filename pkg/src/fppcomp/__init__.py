"""Exact simulation and analysis of two-species first-passage competition on Z^d."""

__version__ = "0.1.0"
