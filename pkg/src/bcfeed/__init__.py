"""Symmetric-rate computations for broadcast channels with delayed feedback."""

__version__ = "0.1.0"
