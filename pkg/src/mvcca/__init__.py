"""Probabilistic canonical correlation analysis for matrix-valued two-view data."""

__version__ = "0.1.0"
