"""Numerical laboratory for three-scale singular limits on the torus."""

__version__ = "0.1.0"
