"""Reduced-order models with implicit feature tracking for parametrized
conservation laws."""

__version__ = "0.1.0"
