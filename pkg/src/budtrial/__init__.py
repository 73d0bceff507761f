"""Uncertainty-directed adaptive randomization for multi-arm clinical trials."""

__version__ = "0.1.0"
