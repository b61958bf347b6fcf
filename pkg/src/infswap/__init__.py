"""Infinite-swapping and parallel-tempering diagnostics on finite grids."""

__version__ = "0.1.0"
