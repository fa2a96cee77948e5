"""Regularised multi-species interaction energies of dislocation-type kernels."""

__version__ = "0.1.0"
