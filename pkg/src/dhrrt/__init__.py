"""Closed-loop kinodynamic rearrangement planning with dynamic horizons."""

__version__ = "0.1.0"
