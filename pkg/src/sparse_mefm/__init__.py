"""Sparse main effect matrix factor model estimation and simulation."""

__version__ = "0.1.0"
