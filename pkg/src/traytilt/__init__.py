"""Tray-tilting simulation and parts-entropy analysis."""

__version__ = "0.1.0"
