"""Numerical laboratory for drift fractional-diffusion equations and their regularity estimates."""

__version__ = "0.1.0"
