"""Numerical laboratory for quantitative almost-periodic homogenization."""

__version__ = "0.1.0"
