"""Reduced dynamical maps from thermofield tensor-train propagation."""

__version__ = "0.1.0"
