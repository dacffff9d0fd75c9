"""Coherent hierarchical forecasting with time-varying AR and basis decomposition."""

__version__ = "0.1.0"
