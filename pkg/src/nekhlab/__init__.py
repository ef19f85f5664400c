"""Numerical laboratory for global C-infinity Nekhoroshev estimates."""

__version__ = "0.1.0"
