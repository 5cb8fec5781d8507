"""Bayesian model-based exploration with myopic value-of-information bonuses."""

__version__ = "0.1.0"
