"""Conversational interface to a simulated EDR endpoint fleet."""

__version__ = "0.1.0"
