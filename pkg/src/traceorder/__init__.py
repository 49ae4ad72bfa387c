"""Bayesian inference of partial orders from agent traces, with baselines and an SOP executor."""

__version__ = "0.1.0"
