"""Numerical laboratory for the Einstein vacuum equations in wave coordinates."""

__version__ = "0.1.0"
