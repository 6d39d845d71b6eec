"""Contextual anomaly detection for univariate and multivariate time series."""

__version__ = "0.1.0"
