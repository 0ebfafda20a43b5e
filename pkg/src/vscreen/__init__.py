"""Desk-scale virtual screening campaign runtime."""

__version__ = "0.1.0"
