"""Tunable wavelet filter banks, matrix-form 2D DWT, and wavelet downsampling units."""

__version__ = "0.1.0"
