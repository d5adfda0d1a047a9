"""Numerical lab for large deviation principles of random walks and renewal processes."""

__version__ = "0.1.0"
