"""Resilience of outlier detection methods to sampling."""

__version__ = "0.1.0"
