"""Exact evaluation of Bayesian response-adaptive randomization designs with a burn-in."""

__version__ = "0.1.0"
