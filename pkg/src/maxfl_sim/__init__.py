"""Federated learning simulator for appeal-maximizing aggregation."""

__version__ = "0.1.0"
