"""Quasi-interpolation with polynomial-weighted Gaussians on scattered nodes."""

__version__ = "0.1.0"
