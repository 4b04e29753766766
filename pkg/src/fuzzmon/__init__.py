"""Adaptive fuzzy rule-based network traffic monitor."""

__version__ = "0.1.0"
