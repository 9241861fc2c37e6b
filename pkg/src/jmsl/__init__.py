"""Bayesian joint models, dynamic predictions and super learning."""

__version__ = "0.1.0"
