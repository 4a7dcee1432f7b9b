"""Quotient geometry of quadratic-activation shallow networks."""

__version__ = "0.1.0"
