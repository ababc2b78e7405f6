"""Bayesian calibration of a multi-species size-spectrum model with
delayed-acceptance MCMC."""

__version__ = "0.1.0"
