"""Guaranteed-performance UAV monitoring of evolving wildfire fronts."""

__version__ = "0.1.0"
