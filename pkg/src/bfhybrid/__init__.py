"""Hybrid Bayes/MLE estimation with higher-order expansion diagnostics."""

__version__ = "0.1.0"
