"""Probabilistic day-ahead wind power forecasting toolkit."""

__version__ = "0.1.0"
