"""Electronic structure in an interpolating tensor-product Deslauriers-Dubuc wavelet basis."""

__version__ = "0.1.0"
