"""Fourier-feature neural networks and spectral-bias analysis on numpy."""

__version__ = "0.1.0"
