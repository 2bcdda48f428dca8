"""Finite-difference obstacle solver for American puts on log-price lattices."""

__version__ = "0.1.0"
